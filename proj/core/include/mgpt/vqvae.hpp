// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/motion_data.hpp"
#include "mgpt/nn.hpp"
#include "mgpt/tokens.hpp"

#include <filesystem>
#include <vector>

namespace mgpt::vq {

using ag::Graph;
using ag::Parameter;
using ag::Var;

struct VqVaeConfig {
    int feature_dim = 32;     // D
    int codebook_size = 64;   // N
    int latent_dim = 32;      // d
    int downsample = 4;       // f
    int hidden = 64;
    double beta = 0.25;
};

/// N learnable d-dimensional entries.
struct Codebook {
    Parameter entries;  // [N x d]

    int size() const { return static_cast<int>(entries.value.rows()); }
    int width() const { return static_cast<int>(entries.value.cols()); }
};

struct LatentSeq {
    Matrix latents;  // [L x d]
};

struct QuantizeResult {
    MotionTokenSeq tokens;
    Matrix quantized;  // [L x d]
};

/// Nearest entry per latent row by squared Euclidean distance; ties go to
/// the lowest index.
QuantizeResult quantize(const LatentSeq& latent, const Codebook& codebook);

struct LossBreakdown {
    double recon = 0.0;       // mean-square reconstruction error
    double embed = 0.0;       // mean-square ||sg[latent] - quantized||
    double commit_raw = 0.0;  // mean-square ||latent - sg[quantized]||
    double commit = 0.0;      // beta * commit_raw
    double total = 0.0;       // recon + embed + commit
};

LossBreakdown vqvae_loss(const Matrix& motion, const Matrix& recon, const Matrix& latent, const Matrix& quantized,
                         double beta);

/// Temporal conv autoencoder with a discrete bottleneck. The encoder is local
/// to each downsample window (pointwise convs around one stride-f conv), so a
/// window tokenizes the same alone or inside a longer clip. The decoder uses
/// kernel-3 convs and nearest upsampling to restore [L*f x D].
class VqVae {
public:
    VqVae() = default;
    VqVae(const VqVaeConfig& cfg, std::uint64_t seed);

    const VqVaeConfig& config() const { return cfg_; }
    const Codebook& codebook() const { return codebook_; }
    Codebook& codebook() { return codebook_; }

    /// L = floor(T / f); trailing frames beyond the last full window are dropped.
    LatentSeq encode(const data::MotionSequence& motion) const;
    QuantizeResult quantize(const LatentSeq& latent) const { return vq::quantize(latent, codebook_); }
    data::MotionSequence decode(const Matrix& quantized) const;

    MotionTokenSeq tokenize(const data::MotionSequence& motion) const;
    data::MotionSequence detokenize(const MotionTokenSeq& tokens) const;
    /// Codebook rows for `tokens`; throws DomainError naming the first bad position.
    Matrix lookup(const MotionTokenSeq& tokens) const;

    // Differentiable pieces used by training and gradient checks.
    Var encode(Graph& g, Var motion) const;
    Var decode(Graph& g, Var quantized) const;
    /// Frames kept by the encoder: floor(T / f) * f.
    Eigen::Index usable_frames(Eigen::Index T) const;

    std::vector<Parameter*> parameters();
    std::vector<Parameter*> encoder_parameters();
    std::vector<Parameter*> decoder_parameters();

    /// Normalization statistics of the training corpus, kept with the weights
    /// so raw-space files can be produced from tokens.
    data::MotionStats stats;

    void save(const std::filesystem::path& path) const;
    static VqVae load(const std::filesystem::path& path);

private:
    VqVaeConfig cfg_;
    nn::Conv1d enc_in_, enc_down_, enc_mid_, enc_out_;
    nn::Conv1d dec_in_, dec_mid1_, dec_mid2_, dec_out_;
    Codebook codebook_;
};

struct VqTrainConfig {
    int steps = 2000;
    double lr = 2e-3;
    int batch_size = 8;
    int window = 32;  // frames per training crop, rounded down to a multiple of f
    /// Leading steps that train encoder and decoder without the bottleneck;
    /// the codebook is seeded from encoder outputs once they end.
    int warmup_steps = 200;
    std::uint64_t seed = 0;
    int log_every = 1;
};

struct VqStepRecord {
    int step = 0;
    LossBreakdown loss;
};

struct VqTrainLog {
    std::vector<VqStepRecord> steps;
    std::vector<long> usage_histogram;  // per codebook entry, over the train split
    double initial_recon_mse = 0.0;     // quantized reconstruction on the train split before any update
    double final_recon_mse = 0.0;
    double usage_fraction = 0.0;
};

struct VqTrainResult {
    VqVae model;
    VqTrainLog log;
};

/// Trains on the train split of `corpus` (raw features; normalized with
/// `corpus.stats`). After `warmup_steps` of plain autoencoding the codebook
/// is seeded from encoder outputs of random train windows; from then on
/// entries move only through the embedding loss. `steps` counts both phases.
VqTrainResult train_vqvae(const data::Corpus& corpus, const VqVaeConfig& cfg, const VqTrainConfig& train);

/// Mean quantized-reconstruction MSE over normalized motions.
double reconstruction_mse(const VqVae& model, const std::vector<data::MotionSequence>& normalized_motions);
std::vector<long> usage_histogram(const VqVae& model, const std::vector<data::MotionSequence>& normalized_motions);

}  // namespace mgpt::vq
