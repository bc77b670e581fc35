// SPDX-License-Identifier: Apache-2.0

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"
#include "mgpt/motion_data.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

namespace {

using namespace mgpt;
using data::Corpus;
using data::Split;
using mgpt::testing::TempDir;

data::SynthOptions small_synth(int n = 8) {
    data::SynthOptions o;
    o.seed = 3;
    o.n_clips = n;
    o.feature_dim = 12;
    o.length_range = {20, 30};
    return o;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p) << s;
}

TEST(Synth, DeterministicGivenSeed) {
    const Corpus a = data::synth_corpus(small_synth());
    const Corpus b = data::synth_corpus(small_synth());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.motions[i].frames, b.motions[i].frames);
        EXPECT_EQ(a.split_of[i], b.split_of[i]);
    }
    auto o = small_synth();
    o.seed = 4;
    EXPECT_NE(data::synth_corpus(o).motions[0].frames, a.motions[0].frames);
}

TEST(Synth, FamiliesRecoverableByNearestCentroid) {
    const Corpus c = data::synth_corpus(small_synth(8));
    std::vector<int> fam;
    std::vector<int> count(4, 0);
    for (const auto& m : c.motions) {
        const auto f = data::synth_family_of(c, m.source_id);
        ASSERT_TRUE(f.has_value());
        fam.push_back(*f);
        ++count[static_cast<std::size_t>(*f)];
    }
    EXPECT_EQ(count, (std::vector<int>{2, 2, 2, 2}));
    // Brute force: every frame of every clip against family centroids.
    std::vector<RowVector> centroid(4, RowVector::Zero(12));
    std::vector<double> frames(4, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        centroid[static_cast<std::size_t>(fam[i])] += c.motions[i].frames.colwise().sum();
        frames[static_cast<std::size_t>(fam[i])] += static_cast<double>(c.motions[i].length());
    }
    for (int k = 0; k < 4; ++k) centroid[static_cast<std::size_t>(k)] /= frames[static_cast<std::size_t>(k)];
    int correct = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const RowVector mean = c.motions[i].frames.colwise().mean();
        int best = 0;
        for (int k = 1; k < 4; ++k) {
            if ((mean - centroid[static_cast<std::size_t>(k)]).squaredNorm() <
                (mean - centroid[static_cast<std::size_t>(best)]).squaredNorm()) {
                best = k;
            }
        }
        correct += best == fam[i] ? 1 : 0;
    }
    EXPECT_EQ(correct, 8);
}

TEST(Synth, FixedLengthRange) {
    auto o = small_synth(6);
    o.length_range = {16, 16};
    for (const auto& m : data::synth_corpus(o).motions) EXPECT_EQ(m.length(), 16);
}

TEST(Synth, SplitsCoverEveryClipAndHaveTestItems) {
    const Corpus c = data::synth_corpus(small_synth(64));
    c.validate();
    EXPECT_EQ(c.motions_in(Split::Train).size() + c.motions_in(Split::Val).size() + c.motions_in(Split::Test).size(),
              64u);
    EXPECT_GE(c.motions_in(Split::Test).size(), 4u);
    EXPECT_GE(c.motions_in(Split::Train).size(), 48u);
}

TEST(Synth, RejectsBadOptions) {
    auto o = small_synth();
    o.n_clips = 0;
    EXPECT_THROW(data::synth_corpus(o), DomainError);
    o = small_synth();
    o.feature_dim = 1;
    EXPECT_THROW(data::synth_corpus(o), DomainError);
}

TEST(Stats, TrainOnlyMeanAndFlooredStd) {
    Corpus c;
    c.feature_dim = 2;
    data::MotionSequence a, b;
    a.source_id = "a";
    a.frames = Matrix(2, 2);
    a.frames << 1, 5, 3, 5;  // second column constant
    b.source_id = "b";
    b.frames = Matrix::Constant(1, 2, 100.0);
    c.motions = {a, b};
    c.split_of = {Split::Train, Split::Test};
    const data::MotionStats s = data::compute_stats(c);
    EXPECT_DOUBLE_EQ(s.mean(0), 2.0);
    EXPECT_DOUBLE_EQ(s.std(0), 1.0);
    EXPECT_DOUBLE_EQ(s.std(1), data::kStdFloor);
}

TEST(Stats, NormalizeRoundTrip) {
    const Corpus c = data::synth_corpus(small_synth());
    const auto n = data::normalize(c.motions[0], c.stats);
    const auto back = data::denormalize(n, c.stats);
    EXPECT_TRUE(back.frames.isApprox(c.motions[0].frames, 1e-12));
    // Train frames are standardized overall.
    Matrix all(0, 12);
    for (const auto* m : c.motions_in(Split::Train)) {
        Matrix grown(all.rows() + m->length(), 12);
        grown << all, data::normalize(*m, c.stats).frames;
        all = grown;
    }
    EXPECT_LT(all.colwise().mean().cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Mfa, RoundTripAtFloatPrecision) {
    TempDir dir("mfa");
    Rng rng(1);
    const Matrix m = rng.normal_matrix(7, 5, 1.0);
    data::write_mfa(dir / "x.mfa", m);
    const Matrix back = data::read_mfa(dir / "x.mfa");
    ASSERT_EQ(back.rows(), 7);
    ASSERT_EQ(back.cols(), 5);
    EXPECT_LT((back - m).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(std::filesystem::file_size(dir / "x.mfa"), 12u + 7u * 5u * 4u);
}

TEST(Mfa, CorruptFilesRejected) {
    TempDir dir("mfa_bad");
    write_text(dir / "bad.mfa", "garbage");
    EXPECT_THROW(data::read_mfa(dir / "bad.mfa"), IoError);
    EXPECT_THROW(data::read_mfa(dir / "missing.mfa"), IoError);
}

TEST(Dataset, ExportLoadRoundTrip) {
    TempDir dir("ds");
    const Corpus c = data::synth_corpus(small_synth());
    data::export_dataset(c, dir.path());
    const Corpus back = data::load_dataset(dir.path());
    EXPECT_EQ(back.size(), c.size());
    EXPECT_EQ(back.annotations.size(), c.annotations.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const auto* orig = c.find(back.motions[i].source_id);
        ASSERT_NE(orig, nullptr);
        EXPECT_LT((orig->frames - back.motions[i].frames).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Dataset, WideClipsAndCaptionSuffixes) {
    TempDir dir("ds263");
    Rng rng(2);
    for (int i = 0; i < 3; ++i) {
        const std::string id = "m" + std::to_string(i);
        data::write_mfa(dir / ("motions/" + id + ".mfa"), rng.normal_matrix(10 + i, 263, 1.0));
        write_text(dir / ("texts/" + id + ".txt"), "a person walks forward#a/DET person/NOUN#0.0#0.0\nsecond caption\n");
    }
    write_text(dir / "splits/train.txt", "m0\nm1\n");
    write_text(dir / "splits/val.txt", "");
    write_text(dir / "splits/test.txt", "m2\n");
    const Corpus c = data::load_dataset(dir.path());
    EXPECT_EQ(c.feature_dim, 263);
    EXPECT_EQ(c.size(), 3u);
    EXPECT_GE(c.annotations.size(), 3u);
    EXPECT_EQ(c.annotations.front().text, "a person walks forward");
    EXPECT_EQ(c.stats.dim(), 263);
}

TEST(Dataset, MixedWidthsAreDataErrors) {
    TempDir dir("dsmix");
    Rng rng(3);
    data::write_mfa(dir / "motions/a.mfa", rng.normal_matrix(8, 263, 1.0));
    data::write_mfa(dir / "motions/b.mfa", rng.normal_matrix(8, 251, 1.0));
    write_text(dir / "splits/train.txt", "a\nb\n");
    write_text(dir / "splits/val.txt", "");
    write_text(dir / "splits/test.txt", "");
    EXPECT_THROW(data::load_dataset(dir.path()), DataError);
}

TEST(Dataset, MissingLayoutNamesThePath) {
    TempDir dir("dsnone");
    try {
        data::load_dataset(dir / "nowhere");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("nowhere"), std::string::npos);
    }
}

TEST(Corpus, ValidateCatchesDanglingAnnotationsAndDuplicates) {
    Corpus c = data::synth_corpus(small_synth());
    c.annotations.push_back({"ghost", "nope"});
    EXPECT_THROW(c.validate(), DataError);
    c = data::synth_corpus(small_synth());
    c.motions[1].source_id = c.motions[0].source_id;
    EXPECT_THROW(c.validate(), DataError);
}

TEST(Corpus, SubsetKeepsStatsAndSplit) {
    const Corpus c = data::synth_corpus(small_synth(32));
    const Corpus t = c.subset(Split::Test);
    EXPECT_EQ(t.size(), c.motions_in(Split::Test).size());
    EXPECT_EQ(t.stats.mean, c.stats.mean);
    for (auto s : t.split_of) EXPECT_EQ(s, Split::Test);
    std::set<std::string> ids;
    for (const auto& m : t.motions) ids.insert(m.source_id);
    for (const auto& a : t.annotations) EXPECT_TRUE(ids.count(a.motion_id));
}

TEST(Io, AtomicWriteLeavesNoTempFiles) {
    TempDir dir("atomic");
    io::write_file_atomic(dir / "f.txt", "one");
    io::write_file_atomic(dir / "f.txt", "two");
    EXPECT_EQ(io::read_file(dir / "f.txt"), "two");
    int n = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++n;
    EXPECT_EQ(n, 1);
}

TEST(Io, ContainerRoundTripAndMagicCheck) {
    io::Container c;
    c.magic = "TEST1";
    c.meta["k"] = 3;
    Rng rng(4);
    c.add("w", rng.normal_matrix(3, 2, 1.0));
    const std::string bytes = io::serialize_container(c);
    const io::Container back = io::parse_container(bytes, "TEST1", "mem");
    EXPECT_EQ(back.meta["k"], 3);
    EXPECT_EQ(back.array("w"), c.array("w"));
    EXPECT_THROW(io::parse_container(bytes, "OTHER", "mem"), Error);
    EXPECT_THROW(io::parse_container(bytes.substr(0, bytes.size() - 3), "TEST1", "mem"), Error);
}

}  // namespace
