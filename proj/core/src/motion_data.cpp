// SPDX-License-Identifier: Apache-2.0

#include "mgpt/motion_data.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace mgpt::data {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open: " + p.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        std::string t = trim(line);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

void require_dims(const MotionSequence& m, const MotionStats& s) {
    if (s.empty()) throw DomainError("motion stats are empty (no train motions?)");
    if (m.dim() != s.dim()) {
        std::ostringstream os;
        os << "stats have " << s.dim() << " dims but motion '" << m.source_id << "' has " << m.dim();
        throw DomainError(os.str());
    }
}

}  // namespace

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + std::string(s) + "'");
}

const MotionSequence* Corpus::find(std::string_view motion_id) const {
    for (const auto& m : motions) {
        if (m.source_id == motion_id) return &m;
    }
    return nullptr;
}

Corpus Corpus::subset(Split s) const {
    Corpus out;
    out.stats = stats;
    out.feature_dim = feature_dim;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < motions.size(); ++i) {
        if (split_of[i] != s) continue;
        out.motions.push_back(motions[i]);
        out.split_of.push_back(s);
        ids.insert(motions[i].source_id);
    }
    for (const auto& a : annotations) {
        if (ids.count(a.motion_id) != 0) out.annotations.push_back(a);
    }
    return out;
}

std::vector<const MotionSequence*> Corpus::motions_in(Split s) const {
    std::vector<const MotionSequence*> out;
    for (std::size_t i = 0; i < motions.size(); ++i) {
        if (split_of[i] == s) out.push_back(&motions[i]);
    }
    return out;
}

std::vector<TextAnnotation> Corpus::annotations_for(std::string_view motion_id) const {
    std::vector<TextAnnotation> out;
    for (const auto& a : annotations) {
        if (a.motion_id == motion_id) out.push_back(a);
    }
    return out;
}

void Corpus::validate() const {
    if (split_of.size() != motions.size()) throw DataError("corpus split tags do not match motion count");
    std::set<std::string> ids;
    for (const auto& m : motions) {
        if (!ids.insert(m.source_id).second) throw DataError("motion id appears twice: " + m.source_id);
        if (m.length() < 1) throw DataError("motion has no frames: " + m.source_id);
        if (m.dim() != feature_dim) throw DataError("inconsistent feature width in " + m.source_id);
        if (!m.frames.allFinite()) throw DataError("non-finite value in motion " + m.source_id);
    }
    for (const auto& a : annotations) {
        if (ids.count(a.motion_id) == 0) throw DataError("annotation references unknown motion " + a.motion_id);
        if (trim(a.text).empty()) throw DataError("empty caption for motion " + a.motion_id);
    }
}

void write_mfa(const fs::path& path, const Matrix& frames) {
    if (frames.rows() < 1 || frames.cols() < 1) throw DomainError("write_mfa: empty motion");
    std::string out;
    out.reserve(12 + static_cast<std::size_t>(frames.size()) * 4);
    auto put32 = [&out](std::uint32_t v) {
        char b[4];
        std::memcpy(b, &v, 4);
        out.append(b, 4);
    };
    put32(kMfaMagic);
    put32(static_cast<std::uint32_t>(frames.rows()));
    put32(static_cast<std::uint32_t>(frames.cols()));
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        for (Eigen::Index d = 0; d < frames.cols(); ++d) {
            const auto v = static_cast<float>(frames(t, d));
            char b[4];
            std::memcpy(b, &v, 4);
            out.append(b, 4);
        }
    }
    io::write_file_atomic(path, out);
}

Matrix read_mfa(const fs::path& path) {
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 12) throw IoError("unreadable motion array (short header): " + path.string());
    std::uint32_t hdr[3];
    std::memcpy(hdr, bytes.data(), 12);
    if (hdr[0] != kMfaMagic) throw IoError("unreadable motion array (bad magic): " + path.string());
    const std::size_t T = hdr[1];
    const std::size_t D = hdr[2];
    if (T == 0 || D == 0) throw IoError("unreadable motion array (empty shape): " + path.string());
    if (bytes.size() != 12 + T * D * 4) throw IoError("unreadable motion array (size mismatch): " + path.string());
    Matrix m(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
    const char* p = bytes.data() + 12;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
            float v;
            std::memcpy(&v, p, 4);
            p += 4;
            m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = v;
        }
    }
    if (!m.allFinite()) throw DataError("non-finite value in motion array: " + path.string());
    return m;
}

Corpus load_dataset(const fs::path& root, Layout /*layout*/) {
    if (!fs::is_directory(root)) throw ConfigError("dataset directory does not exist: " + root.string());
    Corpus c;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        const fs::path listing = root / "splits" / (std::string(to_string(s)) + ".txt");
        if (!fs::exists(listing)) throw ConfigError("missing split file: " + listing.string());
        for (const std::string& id : read_lines(listing)) {
            const fs::path mp = root / "motions" / (id + ".mfa");
            MotionSequence m;
            m.frames = read_mfa(mp);
            m.source_id = id;
            if (c.motions.empty() && c.feature_dim == 0) c.feature_dim = m.dim();
            if (m.dim() != c.feature_dim) {
                std::ostringstream os;
                os << "inconsistent feature width in " << mp.string() << ": " << m.dim() << " (expected "
                   << c.feature_dim << ")";
                throw DataError(os.str());
            }
            const fs::path tp = root / "texts" / (id + ".txt");
            if (fs::exists(tp)) {
                for (const std::string& line : read_lines(tp)) {
                    std::string caption = trim(std::string_view(line).substr(0, line.find('#')));
                    if (!caption.empty()) c.annotations.push_back({caption, id});
                }
            }
            c.motions.push_back(std::move(m));
            c.split_of.push_back(s);
        }
    }
    c.validate();
    if (!c.motions_in(Split::Train).empty()) c.stats = compute_stats(c);
    return c;
}

void export_dataset(const Corpus& corpus, const fs::path& root) {
    corpus.validate();
    std::map<Split, std::string> listings;
    for (std::size_t i = 0; i < corpus.motions.size(); ++i) {
        const auto& m = corpus.motions[i];
        write_mfa(root / "motions" / (m.source_id + ".mfa"), m.frames);
        std::string text;
        for (const auto& a : corpus.annotations_for(m.source_id)) text += a.text + "\n";
        io::write_file_atomic(root / "texts" / (m.source_id + ".txt"), text);
        listings[corpus.split_of[i]] += m.source_id + "\n";
    }
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        io::write_file_atomic(root / "splits" / (std::string(to_string(s)) + ".txt"), listings[s]);
    }
}

MotionStats compute_stats(const std::vector<const MotionSequence*>& motions) {
    if (motions.empty()) throw DomainError("compute_stats: corpus has no train motions");
    const Eigen::Index D = motions.front()->dim();
    RowVector sum = RowVector::Zero(D);
    double count = 0.0;
    for (const auto* m : motions) {
        if (m->dim() != D) throw DomainError("compute_stats: inconsistent feature width");
        sum += m->frames.colwise().sum();
        count += static_cast<double>(m->length());
    }
    MotionStats s;
    s.mean = sum / count;
    RowVector sq = RowVector::Zero(D);
    for (const auto* m : motions) sq += (m->frames.rowwise() - s.mean).array().square().matrix().colwise().sum();
    s.std = (sq / count).cwiseSqrt().cwiseMax(kStdFloor);
    return s;
}

MotionStats compute_stats(const Corpus& corpus) { return compute_stats(corpus.motions_in(Split::Train)); }

MotionSequence normalize(const MotionSequence& motion, const MotionStats& stats) {
    require_dims(motion, stats);
    MotionSequence out = motion;
    out.frames = ((motion.frames.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
    return out;
}

MotionSequence denormalize(const MotionSequence& motion, const MotionStats& stats) {
    require_dims(motion, stats);
    MotionSequence out = motion;
    out.frames = (motion.frames.array().rowwise() * stats.std.array()).matrix().rowwise() + stats.mean;
    return out;
}

Corpus normalized(const Corpus& corpus) {
    Corpus out = corpus;
    for (auto& m : out.motions) m = normalize(m, corpus.stats);
    return out;
}

const std::vector<SynthFamily>& synth_families() {
    static const std::vector<SynthFamily> families = {
        {"wave slow", "a person waves slowly", 0.5},  {"spin fast", "a person spins quickly", 1.5},
        {"walk slow", "a person walks slowly", 0.6},  {"jump fast", "a person jumps quickly", 1.3},
        {"wave fast", "a person waves quickly", 1.4}, {"spin slow", "a person spins slowly", 0.45},
        {"walk fast", "a person walks quickly", 1.2}, {"jump slow", "a person jumps slowly", 0.55},
    };
    return families;
}

Corpus synth_corpus(const SynthOptions& o) {
    const auto& table = synth_families();
    if (o.n_clips < 1) throw DomainError("synth_corpus: n_clips must be >= 1");
    if (o.feature_dim < 2) throw DomainError("synth_corpus: feature_dim must be >= 2");
    if (o.length_range.first < 1 || o.length_range.first > o.length_range.second) {
        throw DomainError("synth_corpus: length_range is inverted or non-positive");
    }
    if (o.n_families < 1 || o.n_families > static_cast<int>(table.size())) {
        throw DomainError("synth_corpus: n_families must be in [1, " + std::to_string(table.size()) + "]");
    }
    Rng rng(o.seed);
    const int D = o.feature_dim;

    struct Shape {
        RowVector offset, sin_dir, cos_dir, harmonic;
    };
    std::vector<Shape> shapes;
    for (int k = 0; k < o.n_families; ++k) {
        Shape s;
        s.offset = rng.normal_matrix(1, D, 1.5).row(0);
        s.sin_dir = rng.normal_matrix(1, D, 1.0).row(0);
        s.cos_dir = rng.normal_matrix(1, D, 1.0).row(0);
        s.harmonic = rng.normal_matrix(1, D, 0.3).row(0);
        shapes.push_back(std::move(s));
    }

    Corpus c;
    c.feature_dim = D;
    std::vector<std::vector<std::size_t>> by_family(static_cast<std::size_t>(o.n_families));
    for (int i = 0; i < o.n_clips; ++i) {
        const int k = i % o.n_families;
        const auto& fam = table[static_cast<std::size_t>(k)];
        const auto& sh = shapes[static_cast<std::size_t>(k)];
        const auto T = static_cast<Eigen::Index>(rng.uniform_int(o.length_range.first, o.length_range.second));
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double amp = rng.uniform(0.85, 1.15);
        const double omega = 2.0 * M_PI * fam.frequency_hz;
        MotionSequence m;
        m.fps = o.fps;
        std::ostringstream id;
        id << "synth_" << std::setw(4) << std::setfill('0') << i;
        m.source_id = id.str();
        m.frames.resize(T, D);
        for (Eigen::Index t = 0; t < T; ++t) {
            const double th = omega * static_cast<double>(t) / o.fps + phase;
            m.frames.row(t) = sh.offset + amp * (std::sin(th) * sh.sin_dir + std::cos(th) * sh.cos_dir) +
                              std::sin(2.0 * th) * sh.harmonic;
            for (int d = 0; d < D; ++d) m.frames(t, d) += o.noise * rng.normal();
        }
        by_family[static_cast<std::size_t>(k)].push_back(c.motions.size());
        c.annotations.push_back({fam.caption, m.source_id});
        c.motions.push_back(std::move(m));
        c.split_of.push_back(Split::Train);
    }
    for (auto& members : by_family) {
        rng.shuffle(members.begin(), members.end());
        const auto n = static_cast<double>(members.size());
        auto n_test = static_cast<std::size_t>(std::lround(n * 0.15));
        auto n_val = static_cast<std::size_t>(std::lround(n * 0.05));
        while (n_test + n_val >= members.size() && n_test + n_val > 0) {
            if (n_val > 0) {
                --n_val;
            } else {
                --n_test;
            }
        }
        for (std::size_t j = 0; j < members.size(); ++j) {
            Split s = Split::Train;
            if (j < n_test) {
                s = Split::Test;
            } else if (j < n_test + n_val) {
                s = Split::Val;
            }
            c.split_of[members[j]] = s;
        }
    }
    c.validate();
    c.stats = compute_stats(c);
    return c;
}

std::optional<int> synth_family_of(const Corpus& corpus, std::string_view motion_id) {
    const auto& table = synth_families();
    for (const auto& a : corpus.annotations) {
        if (a.motion_id != motion_id) continue;
        for (std::size_t k = 0; k < table.size(); ++k) {
            if (table[k].caption == a.text) return static_cast<int>(k);
        }
    }
    return std::nullopt;
}

}  // namespace mgpt::data
