// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mgpt::data {

namespace fs = std::filesystem;

/// A [T x D] sequence of per-frame motion features.
struct MotionSequence {
    Matrix frames;
    double fps = 20.0;
    std::string source_id;

    Eigen::Index length() const { return frames.rows(); }
    Eigen::Index dim() const { return frames.cols(); }
};

struct TextAnnotation {
    std::string text;
    std::string motion_id;
};

struct MotionStats {
    RowVector mean;
    RowVector std;

    Eigen::Index dim() const { return mean.size(); }
    bool empty() const { return mean.size() == 0; }
};

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// Motions of every split with a parallel split tag. Statistics always come
/// from the train split.
struct Corpus {
    std::vector<MotionSequence> motions;
    std::vector<Split> split_of;
    std::vector<TextAnnotation> annotations;
    MotionStats stats;
    Eigen::Index feature_dim = 0;

    std::size_t size() const { return motions.size(); }
    const MotionSequence* find(std::string_view motion_id) const;
    /// Motions and annotations restricted to one split; stats are shared.
    Corpus subset(Split s) const;
    std::vector<const MotionSequence*> motions_in(Split s) const;
    std::vector<TextAnnotation> annotations_for(std::string_view motion_id) const;
    /// Throws DataError if an annotation is dangling or a motion id repeats.
    void validate() const;
};

enum class Layout { HumanML3DLike };

inline constexpr double kStdFloor = 1e-6;
inline constexpr std::uint32_t kMfaMagic = 0x3141464D;  // "MFA1" little-endian

// --- motion feature array files ------------------------------------------

void write_mfa(const fs::path& path, const Matrix& frames);
Matrix read_mfa(const fs::path& path);

// --- dataset ----------------------------------------------------------------

/// Reads `motions/<id>.mfa`, `texts/<id>.txt` and `splits/{train,val,test}.txt`
/// under `root`. Caption lines in the `caption#tokens#start#end` form keep
/// only the caption part.
Corpus load_dataset(const fs::path& root, Layout layout = Layout::HumanML3DLike);
void export_dataset(const Corpus& corpus, const fs::path& root);

/// Per-dimension mean and population standard deviation over every frame of
/// the train-split motions; std is floored at kStdFloor.
MotionStats compute_stats(const Corpus& corpus);
MotionStats compute_stats(const std::vector<const MotionSequence*>& motions);

MotionSequence normalize(const MotionSequence& motion, const MotionStats& stats);
MotionSequence denormalize(const MotionSequence& motion, const MotionStats& stats);
/// Normalizes every motion in place with `corpus.stats`.
Corpus normalized(const Corpus& corpus);

// --- synthetic corpus ---------------------------------------------------------

struct SynthFamily {
    std::string name;      // e.g. "wave slow"
    std::string caption;   // e.g. "a person waves slowly"
    double frequency_hz = 0.0;
};

/// The ordered family table synthetic clips are drawn from.
const std::vector<SynthFamily>& synth_families();

struct SynthOptions {
    std::uint64_t seed = 0;
    int n_clips = 64;
    int feature_dim = 32;
    std::pair<int, int> length_range{32, 64};
    int n_families = 4;
    double fps = 20.0;
    double noise = 0.01;
};

/// Deterministic corpus of smooth family-parameterized signals. Clip i
/// belongs to family i mod n_families; families have well separated mean
/// poses so a nearest-centroid rule recovers them exactly. Splits are
/// stratified by family, roughly 80/5/15.
Corpus synth_corpus(const SynthOptions& options);

/// Family index of a synthetic clip id, or nullopt for foreign ids.
std::optional<int> synth_family_of(const Corpus& corpus, std::string_view motion_id);

}  // namespace mgpt::data
