// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/evaluation.hpp"
#include "mgpt/generator.hpp"
#include "mgpt/instruction.hpp"
#include "mgpt/lm.hpp"
#include "mgpt/motion_data.hpp"
#include "mgpt/vqvae.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mgpt::pipeline {

/// Every tunable of a run, grouped by stage. Component seeds are derived
/// from `seed` so one number fixes the whole pipeline.
struct RunConfig {
    std::uint64_t seed = 0;

    data::SynthOptions synth;

    vq::VqVaeConfig vqvae;
    vq::VqTrainConfig vq_train;

    lm::LmConfig lm{2, 2, 64, 256, 16, 0};
    lm::LmSchedule pretrain{60, 3e-3, 0.01, 16, 4, 1.0, 0, 1, 4096.0};
    lm::LoraConfig lora{8, 16.0, {"q", "k", "v", "o", "ffn_in", "ffn_out"}, 0.0};
    lm::LmSchedule lora_schedule{400, 3e-3, 0.01, 16, 4, 1.0, 0, 1, 4096.0};
    bool digit_mode = false;
    instr::PromptVariant variant = instr::PromptVariant::V0;
    std::vector<instr::TaskKind> tasks{instr::TaskKind::TextOnly, instr::TaskKind::TextInit,
                                       instr::TaskKind::TextLast, instr::TaskKind::TextKey};

    gen::SamplingConfig sampling;  // max_new_tokens 0 means the corpus budget
    double budget_factor = 1.5;

    eval::ExtractorConfig extractor;
    eval::EvalConfig eval;
    data::Split eval_split = data::Split::Test;

    RunConfig();
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays `j` on the defaults; unknown keys are a ConfigError naming the
/// dotted path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig merge(const RunConfig& base, const nlohmann::json& overrides);

/// Stable per-component seed.
std::uint64_t derive_seed(std::uint64_t global, std::string_view component);
/// FNV-1a of the canonical JSON dump.
std::string config_hash(const RunConfig& c);

// --- stages --------------------------------------------------------------------

data::Corpus prepare_synth(const RunConfig& c);

vq::VqTrainResult train_vqvae_stage(const data::Corpus& corpus, const RunConfig& c);

std::vector<instr::InstructionSample> instructions_stage(const data::Corpus& corpus, const vq::VqVae& vqvae,
                                                         const RunConfig& c, data::Split split,
                                                         const std::vector<instr::TaskKind>& tasks);

struct BaseStage {
    lm::Vocabulary vocab;
    lm::TransformerLm model;
    lm::LmTrainLog log;
    int budget = 0;  // decoding budget in new tokens
};

BaseStage base_stage(const std::vector<instr::InstructionSample>& instructions, int motion_vocab, const RunConfig& c);

/// `epoch_share` scales the step count, e.g. 0.25 for one task of four at
/// equal epochs.
lm::LoraTrainResult lora_stage(BaseStage& base, const std::vector<instr::InstructionSample>& instructions,
                               const RunConfig& c, double epoch_share = 1.0, std::string_view salt = "lora");

eval::ExtractorTrainResult extractor_stage(const data::Corpus& corpus, const RunConfig& c);

gen::SamplingConfig sampling_for(const RunConfig& c, int budget);

std::vector<eval::EvalItem> eval_items(const gen::BatchOutput& out);

/// Batch generation on `c.eval_split` for one task followed by evaluation.
eval::EvalReport evaluate_task(const data::Corpus& corpus, const gen::Models& models,
                               const eval::FeatureExtractor& fx, const RunConfig& c, instr::TaskKind task,
                               int budget);

struct PipelineResult {
    nlohmann::json report;  // {"tasks": {...}, "training": {...}, "config_hash": ...}
    vq::VqTrainLog vq_log;
    lm::LmTrainLog pretrain_log;
    lm::LmTrainLog lora_log;
    eval::ExtractorTrainLog extractor_log;
};

/// Synthetic corpus (or `corpus` when given) through every stage in memory.
PipelineResult run_pipeline(const data::Corpus& corpus, const RunConfig& c);

}  // namespace mgpt::pipeline
