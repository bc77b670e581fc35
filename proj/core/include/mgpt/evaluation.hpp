// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/instruction.hpp"
#include "mgpt/motion_data.hpp"
#include "mgpt/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mgpt::eval {

// --- metrics -------------------------------------------------------------------

struct FidResult {
    double value = 0.0;
    bool jittered = false;  // 1e-6 diagonal jitter was needed
};

/// Frechet distance between Gaussians fit to the rows of `real` and `gen`
/// (unbiased covariances).
FidResult fid(const Matrix& real, const Matrix& gen);

/// Mean Euclidean distance between paired rows.
double mm_dist(const Matrix& text_feats, const Matrix& motion_feats);

/// Top-1..k motion-to-text retrieval accuracy. Rows are shuffled with `seed`
/// into pools of `pool_size` (a trailing partial pool is dropped); within a
/// pool each motion ranks every pool text, its own text first so ties go to
/// the true match.
std::vector<double> r_precision(const Matrix& motion_feats, const Matrix& text_feats, int pool_size, int k,
                                std::uint64_t seed);

/// Mean distance between two disjoint random subsets of size `subset`.
double diversity(const Matrix& feats, int subset, std::uint64_t seed);
/// min(300, n / 2).
int default_diversity_subset(Eigen::Index n);

/// Sum over positions of ||gen[p] - cond[i]||, divided by the frame count.
double recon_loss(const data::MotionSequence& gen, const Matrix& cond_frames, const std::vector<int>& positions);

enum class VelMode { Boundary, Window };
enum class Align { Leading, Trailing };

/// Velocity error next to a condition window. `positions` index `gt`; with
/// Trailing alignment gt step t maps to gen step t - T_gt + T_gen. Boundary
/// mode compares the steps that cross the window edge; Window mode also
/// includes the steps inside it.
double vel_loss(const data::MotionSequence& gen, const data::MotionSequence& gt, const std::vector<int>& positions,
                Align align = Align::Leading, VelMode mode = VelMode::Boundary);

/// Mean over key frames of the nearest Euclidean distance to any gen frame.
double key_dist(const data::MotionSequence& gen, const Matrix& key_frames);

// --- feature extractor ---------------------------------------------------------

struct ExtractorConfig {
    int width = 32;     // F
    int hidden = 64;
    int steps = 400;
    double lr = 3e-3;
    double margin = 4.0;  // hinge on squared distance of mismatched pairs
    std::uint64_t seed = 0;
};

/// Desk-scale bi-encoder. The motion branch maps [x_t, x_{t+1} - x_t] through
/// an MLP and mean-pools over time; the text branch averages word embeddings.
/// Both end in a linear map to width F.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(int feature_dim, std::vector<std::string> words, const ExtractorConfig& cfg);

    int width() const { return cfg_.width; }
    int feature_dim() const { return feature_dim_; }
    const ExtractorConfig& config() const { return cfg_; }

    /// Motions in normalized feature space, at least 2 frames.
    RowVector embed_motion(const data::MotionSequence& motion) const;
    RowVector embed_text(const std::string& text) const;
    Matrix embed_motions(const std::vector<data::MotionSequence>& motions) const;
    Matrix embed_texts(const std::vector<std::string>& texts) const;

    ag::Var motion_graph(ag::Graph& g, const Matrix& frames) const;
    ag::Var text_graph(ag::Graph& g, const std::string& text) const;
    std::vector<ag::Parameter*> parameters();

    std::string provenance;

    void save(const std::filesystem::path& path) const;
    static FeatureExtractor load(const std::filesystem::path& path);

private:
    std::vector<int> word_ids(const std::string& text) const;

    ExtractorConfig cfg_;
    int feature_dim_ = 0;
    std::vector<std::string> words_;
    std::map<std::string, int> word_index_;
    nn::Linear m_in_, m_mid_, m_out_;
    ag::Parameter word_emb_;
    nn::Linear t_out_;
};

struct ExtractorTrainLog {
    std::vector<double> losses;
    double val_matched_rate = 0.0;  // matched < mismatched over validation comparisons
};

struct ExtractorTrainResult {
    FeatureExtractor extractor;
    ExtractorTrainLog log;
};

/// Contrastive training on the train split (normalized). Fewer than two
/// distinct captions is a TrainingError.
ExtractorTrainResult train_bi_encoder(const data::Corpus& corpus, const ExtractorConfig& cfg);

/// Fraction of (motion i, text j) comparisons with distinct captions where
/// the matched distance is strictly smaller.
double matched_rate(const FeatureExtractor& fx, const std::vector<data::MotionSequence>& motions,
                    const std::vector<std::string>& texts);

// --- evaluation driver --------------------------------------------------------

struct EvalItem {
    std::string motion_id;
    std::string text;
    instr::TaskKind task = instr::TaskKind::TextOnly;
    std::optional<data::MotionSequence> generated;  // normalized; absent when generation failed
    std::vector<int> positions;                     // condition frames in the ground truth
};

struct EvalConfig {
    int r_precision_pool = 32;
    int diversity_subset = 300;  // capped at n / 2
    std::uint64_t seed = 0;
    VelMode vel_mode = VelMode::Boundary;
    nlohmann::json sampling = nlohmann::json::object();  // echoed into the report
};

nlohmann::json to_json(const EvalConfig& c);

struct EvalReport {
    std::optional<double> fid, mm_dist, top1, top2, top3, diversity, recon, vel, dist;
    std::map<std::string, std::string> absent;  // metric -> reason
    long evaluated = 0;
    long excluded = 0;
    bool fid_jitter = false;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static EvalReport load(const std::filesystem::path& path);
};

/// Computes every metric whose inputs exist. `gt` holds raw motions and is
/// normalized with its own stats; generated motions are already normalized.
EvalReport evaluate(const std::vector<EvalItem>& items, const data::Corpus& gt, const FeatureExtractor& fx,
                    const EvalConfig& cfg);

}  // namespace mgpt::eval
