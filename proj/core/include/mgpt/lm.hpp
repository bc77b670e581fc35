// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/instruction.hpp"
#include "mgpt/nn.hpp"
#include "mgpt/tokens.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgpt::lm {

using ag::Graph;
using ag::Parameter;
using ag::Var;

// --- vocabulary --------------------------------------------------------------

/// Id layout: sorted word tokens, then one atomic token per motion index,
/// then the structural block (BOS/EOS/PAD/UNK, motion delimiters, section
/// markers, preambles; digit tokens in digit mode).
class Vocabulary {
public:
    Vocabulary() = default;

    static Vocabulary build(const std::vector<instr::InstructionSample>& corpus, int motion_vocab_size,
                            bool digit_mode = false);

    int size() const { return static_cast<int>(tokens_.size()); }
    int text_count() const { return text_count_; }
    int motion_count() const { return motion_count_; }
    int motion_begin() const { return text_count_; }
    bool digit_mode() const { return digit_mode_; }

    int id(std::string_view token) const;  // UNK when absent
    const std::string& token(int id) const;

    int motion_id(int k) const;
    bool is_motion(int id) const { return id >= text_count_ && id < text_count_ + motion_count_; }
    int motion_index(int id) const { return id - text_count_; }

    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int pad() const { return pad_; }
    int unk() const { return unk_; }

    /// Ids that may appear inside an answer (motion atoms, or digits and the
    /// separator in digit mode).
    bool is_answer_token(int id) const;

    /// Scans rendered prompt text. Atomic strings (preambles, markers,
    /// delimiters) become single ids; numbers inside motion spans or after
    /// the response marker become motion ids; other text splits into words.
    std::vector<int> encode_text(std::string_view rendered) const;
    std::vector<int> encode_answer(const MotionTokenSeq& tokens) const;
    /// Answer text ("7, 9, 12") for a run of answer ids; stops at the first
    /// id that is not an answer token and renders it verbatim.
    std::string decode_answer(std::span<const int> ids) const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && digit_mode_ == o.digit_mode_; }

    /// Structural tokens in id order (digit tokens included in digit mode).
    static std::vector<std::string> structural_tokens(bool digit_mode);

private:
    void index();

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int text_count_ = 0;
    int motion_count_ = 0;
    bool digit_mode_ = false;
    int bos_ = -1, eos_ = -1, pad_ = -1, unk_ = -1;
    int digit0_ = -1, sep_ = -1;
};

/// Word split used for vocabulary building: runs of letters/digits (with
/// inner ' and -) and single punctuation characters.
std::vector<std::string> split_words(std::string_view text);

// --- configuration -----------------------------------------------------------

struct LmConfig {
    int n_layers = 4;
    int n_heads = 4;
    int model_dim = 256;
    int ffn_dim = 1024;
    int max_seq_len = 256;
    int vocab_size = 0;
    /// Output head shares the token embedding table (plus its own bias).
    bool tie_head = true;
    /// When positive, answer tokens take positions answer_offset, answer_offset + 1, ...
    /// whatever the prompt length; prompts must be shorter than the offset.
    int answer_offset = 0;

    void validate() const;
    bool operator==(const LmConfig&) const = default;
};

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);

/// Closed-form element count of the base transformer.
long base_param_count(const LmConfig& c);

/// Adapter targets: "q", "k", "v", "o" (attention) and "ffn_in", "ffn_out".
struct LoraConfig {
    int r = 8;
    double alpha = 16.0;
    std::vector<std::string> targets{"q", "k", "v", "o"};
    double dropout = 0.0;

    double scale() const { return alpha / static_cast<double>(r); }
    void validate() const;
};

nlohmann::json to_json(const LoraConfig& c);
LoraConfig lora_config_from_json(const nlohmann::json& j);

/// Input and output widths of an adapter target.
std::pair<int, int> target_shape(const LmConfig& c, std::string_view target);

// --- adapters ----------------------------------------------------------------

struct LoraPair {
    int layer = 0;
    std::string target;
    Parameter A;  // [r x d_in], small random
    Parameter B;  // [d_out x r], zeros
};

struct AdapterState {
    LoraConfig config;
    std::vector<LoraPair> pairs;

    const LoraPair* find(int layer, std::string_view target) const;
    std::vector<Parameter*> parameters();
    long element_count() const;

    void save(const std::filesystem::path& path) const;
    static AdapterState load(const std::filesystem::path& path);
};

AdapterState make_adapter(const LmConfig& base, const LoraConfig& cfg, std::uint64_t seed);

/// W + (alpha / r) B A.
Matrix effective_weight(const Matrix& W, const Matrix& A, const Matrix& B, double alpha, int r);

/// Adapter elements over base elements: sum over targets of r (d_in + d_out)
/// divided by base_param_count.
double trainable_ratio(const AdapterState& adapter, const LmConfig& base);

// --- model -------------------------------------------------------------------

/// Pre-norm decoder-only transformer with learned positions. The output head
/// is tied to the token embeddings unless `tie_head` is off.
class TransformerLm {
public:
    TransformerLm() = default;
    TransformerLm(const LmConfig& cfg, std::uint64_t seed);

    const LmConfig& config() const { return cfg_; }

    /// Logits [T x V]. `dropout_rng` enables adapter dropout (training only).
    /// `answer_start` is the index of the first answer id in `ids`, or -1
    /// for prompt-only input.
    Var forward(Graph& g, std::span<const int> ids, const AdapterState* adapter, Rng* dropout_rng = nullptr,
                int answer_start = -1) const;
    /// Eval-mode logits.
    Matrix logits(std::span<const int> ids, const AdapterState* adapter, int answer_start = -1) const;

    /// Position ids used by forward().
    std::vector<int> positions(int length, int answer_start) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    void set_frozen(bool frozen);
    long param_count() const;

    /// Weight of a named projection, e.g. (0, "q").
    const Parameter& projection(int layer, std::string_view target) const;

    void save(const std::filesystem::path& path, const Vocabulary& vocab) const;
    struct Loaded;
    static Loaded load(const std::filesystem::path& path);

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Linear q, k, v, o, ffn_in, ffn_out;
    };

    Var project(Graph& g, Var x, const nn::Linear& lin, int layer, std::string_view target,
                const AdapterState* adapter, Rng* dropout_rng) const;

    LmConfig cfg_;
    Parameter tok_emb_;  // [V x D]
    Parameter pos_emb_;  // [S x D]
    std::vector<Block> blocks_;
    nn::LayerNorm ln_f_;
    nn::Linear head_;
};

struct TransformerLm::Loaded {
    TransformerLm model;
    Vocabulary vocab;
};

// --- training ----------------------------------------------------------------

/// BOS, prompt ids, answer ids, EOS. Position t predicts ids[t + 1]; only
/// targets at index >= answer_start carry loss.
struct EncodedSample {
    std::vector<int> ids;
    int answer_start = 0;
    int answer_count() const { return static_cast<int>(ids.size()) - answer_start; }
};

EncodedSample encode_sample(const Vocabulary& vocab, const instr::InstructionSample& s);
/// BOS + prompt ids, ready for decoding.
std::vector<int> encode_prompt(const Vocabulary& vocab, const instr::InstructionSample& s);

struct LmSchedule {
    int steps = 500;  // optimizer steps
    double lr = 3e-3;
    double weight_decay = 0.01;
    int batch_size = 256;
    int micro_batch = 4;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    int log_every = 1;
    double memory_budget_mb = 4096.0;

    int accumulation_steps() const;
    void validate() const;
};

nlohmann::json to_json(const LmSchedule& s);
LmSchedule lm_schedule_from_json(const nlohmann::json& j);

/// Rough peak working set of a training step, in MiB.
double estimated_training_memory_mb(const LmConfig& cfg, const LmSchedule& s, long trainable);

struct LmStepRecord {
    int step = 0;
    double loss = 0.0;
};

struct LmTrainLog {
    std::vector<LmStepRecord> steps;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Mean cross-entropy per answer target (EOS included), eval mode.
double answer_loss(const TransformerLm& model, const AdapterState* adapter, const std::vector<EncodedSample>& data);

/// One optimizer step over `batch` split into micro-batches; loss is the sum
/// of answer-span cross-entropy divided by the batch's answer target count.
/// Only non-frozen parameters receive gradients.
double train_step(const TransformerLm& model, AdapterState* adapter, const std::vector<const EncodedSample*>& batch,
                  int micro_batch, nn::AdamW& opt, Rng& rng);

/// Next-token pretraining of the base on prompt text (every position).
LmTrainLog pretrain_base(TransformerLm& model, const Vocabulary& vocab,
                         const std::vector<instr::InstructionSample>& corpus, const LmSchedule& schedule);

struct LoraTrainResult {
    AdapterState adapter;
    LmTrainLog log;
};

/// Freezes `model` and trains a fresh adapter on answer-span cross-entropy.
LoraTrainResult train_lora(TransformerLm& model, const Vocabulary& vocab,
                           const std::vector<instr::InstructionSample>& corpus, const LoraConfig& lora,
                           const LmSchedule& schedule);

/// Decoding budget in new tokens: `factor` times the longest answer in the
/// corpus, plus one slot for EOS.
int answer_budget(const Vocabulary& vocab, const std::vector<instr::InstructionSample>& corpus, double factor = 1.5);

/// Config for a corpus: vocab size filled in, max_seq_len raised so the
/// longest prompt plus the decoding budget fits.
LmConfig fit_config(LmConfig base, const Vocabulary& vocab, const std::vector<instr::InstructionSample>& corpus,
                    double budget_factor = 1.5);

}  // namespace mgpt::lm
