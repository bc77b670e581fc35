// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/instruction.hpp"
#include "mgpt/lm.hpp"
#include "mgpt/vqvae.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mgpt::gen {

enum class SamplingMode { Greedy, TopK, Temperature };

std::string_view to_string(SamplingMode m);
SamplingMode sampling_mode_from_string(std::string_view s);

struct SamplingConfig {
    SamplingMode mode = SamplingMode::Greedy;
    int k = 10;
    double temperature = 1.0;
    int max_new_tokens = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SamplingConfig& c);
SamplingConfig sampling_from_json(const nlohmann::json& j);

enum class StopReason { Eos, MaxLen, ParseStop };
std::string_view to_string(StopReason r);

struct TokenGeneration {
    std::vector<int> ids;  // new ids, including EOS or the non-answer id that stopped decoding
    StopReason stop = StopReason::MaxLen;
};

/// Appends ids until EOS, a non-answer id, or the budget. Greedy breaks ties
/// toward the lowest id; sampling modes draw from `rng`.
TokenGeneration generate_tokens(const lm::TransformerLm& model, const lm::AdapterState* adapter,
                                const lm::Vocabulary& vocab, std::span<const int> prompt, const SamplingConfig& cfg,
                                Rng& rng);
/// Same, with an rng seeded from `cfg.seed`.
TokenGeneration generate_tokens(const lm::TransformerLm& model, const lm::AdapterState* adapter,
                                const lm::Vocabulary& vocab, std::span<const int> prompt, const SamplingConfig& cfg);

/// Non-owning view of the trained pipeline.
struct Models {
    const vq::VqVae* vqvae = nullptr;
    const lm::TransformerLm* lm = nullptr;
    const lm::AdapterState* adapter = nullptr;
    const lm::Vocabulary* vocab = nullptr;
    instr::PromptVariant variant = instr::PromptVariant::V0;
};

struct GenerationResult {
    MotionTokenSeq tokens;
    data::MotionSequence motion;  // normalized feature space
    std::string raw_answer;
    StopReason stop = StopReason::MaxLen;
    bool truncated = false;
    // Intermediate artifacts.
    std::string prompt;
    MotionTokenSeq condition_tokens;
    std::vector<int> prompt_ids;
    std::vector<int> generated_ids;
};

/// Condition tokens, instruction, prompt, decoding, parsing, detokenization.
/// `pose_cond` holds normalized condition frames and must be present exactly
/// when `task` is not text-only.
GenerationResult generate_motion(instr::TaskKind task, const std::string& text, const std::optional<Matrix>& pose_cond,
                                 const Models& models, const SamplingConfig& cfg, Rng& rng);
GenerationResult generate_motion(instr::TaskKind task, const std::string& text, const std::optional<Matrix>& pose_cond,
                                 const Models& models, const SamplingConfig& cfg);

struct BatchItem {
    std::string motion_id;
    std::string text;
    instr::TaskKind task = instr::TaskKind::TextOnly;
    instr::PoseCondition condition;     // empty for text-only
    std::optional<GenerationResult> result;
    std::string error;                  // set when generation failed
};

struct BatchOutput {
    std::vector<BatchItem> items;
    int failures = 0;
};

/// One item per annotation of every motion in `split`, in corpus order.
/// Conditions are drawn with `condition_seed`; sampling uses a stream forked
/// per item from `cfg.seed`. Failed items are recorded, never thrown.
BatchOutput batch_generate(const data::Corpus& corpus, data::Split split, instr::TaskKind task, const Models& models,
                           const SamplingConfig& cfg, std::uint64_t condition_seed);

}  // namespace mgpt::gen
