// SPDX-License-Identifier: Apache-2.0

#include "mgpt/pipeline.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <cmath>

namespace mgpt::pipeline {

RunConfig::RunConfig() { sampling.max_new_tokens = 0; }

namespace {

nlohmann::json schedule_json(const lm::LmSchedule& s) {
    return {{"steps", s.steps},
            {"lr", s.lr},
            {"weight_decay", s.weight_decay},
            {"batch_size", s.batch_size},
            {"micro_batch", s.micro_batch},
            {"grad_clip", s.grad_clip},
            {"memory_budget_mb", s.memory_budget_mb}};
}

lm::LmSchedule schedule_from(const nlohmann::json& j) {
    lm::LmSchedule s;
    s.steps = j.at("steps").get<int>();
    s.lr = j.at("lr").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.batch_size = j.at("batch_size").get<int>();
    s.micro_batch = j.at("micro_batch").get<int>();
    s.grad_clip = j.at("grad_clip").get<double>();
    s.memory_budget_mb = j.at("memory_budget_mb").get<double>();
    s.log_every = 1;
    return s;
}

void overlay(nlohmann::json& base, const nlohmann::json& over, const std::string& path) {
    if (!over.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be a mapping");
    for (auto it = over.begin(); it != over.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
        nlohmann::json& slot = base[it.key()];
        if (slot.is_object()) {
            overlay(slot, it.value(), key);
        } else {
            if (slot.is_number() && !it.value().is_number()) {
                throw ConfigError("config: '" + key + "' must be a number");
            }
            slot = it.value();
        }
    }
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json tasks = nlohmann::json::array();
    for (auto t : c.tasks) tasks.push_back(std::string(instr::to_string(t)));
    return {
        {"seed", c.seed},
        {"data",
         {{"synth",
           {{"n_clips", c.synth.n_clips},
            {"feature_dim", c.synth.feature_dim},
            {"length_min", c.synth.length_range.first},
            {"length_max", c.synth.length_range.second},
            {"n_families", c.synth.n_families},
            {"fps", c.synth.fps},
            {"noise", c.synth.noise}}}}},
        {"vqvae",
         {{"codebook_size", c.vqvae.codebook_size},
          {"latent_dim", c.vqvae.latent_dim},
          {"downsample", c.vqvae.downsample},
          {"hidden", c.vqvae.hidden},
          {"beta", c.vqvae.beta},
          {"steps", c.vq_train.steps},
          {"lr", c.vq_train.lr},
          {"batch_size", c.vq_train.batch_size},
          {"window", c.vq_train.window},
          {"warmup_steps", c.vq_train.warmup_steps}}},
        {"lm",
         {{"model",
           {{"n_layers", c.lm.n_layers},
            {"n_heads", c.lm.n_heads},
            {"model_dim", c.lm.model_dim},
            {"ffn_dim", c.lm.ffn_dim},
            {"max_seq_len", c.lm.max_seq_len},
            {"tie_head", c.lm.tie_head}}},
          {"pretrain", schedule_json(c.pretrain)},
          {"lora", lm::to_json(c.lora)},
          {"schedule", schedule_json(c.lora_schedule)},
          {"digit_mode", c.digit_mode},
          {"variant", std::string(instr::to_string(c.variant))},
          {"tasks", tasks}}},
        {"generate",
         {{"mode", std::string(gen::to_string(c.sampling.mode))},
          {"k", c.sampling.k},
          {"temperature", c.sampling.temperature},
          {"max_new_tokens", c.sampling.max_new_tokens},
          {"budget_factor", c.budget_factor}}},
        {"eval",
         {{"split", std::string(data::to_string(c.eval_split))},
          {"r_precision_pool", c.eval.r_precision_pool},
          {"diversity_subset", c.eval.diversity_subset},
          {"vel_mode", c.eval.vel_mode == eval::VelMode::Boundary ? "boundary" : "window"},
          {"extractor",
           {{"width", c.extractor.width},
            {"hidden", c.extractor.hidden},
            {"steps", c.extractor.steps},
            {"lr", c.extractor.lr},
            {"margin", c.extractor.margin}}}}},
    };
}

RunConfig merge(const RunConfig& base, const nlohmann::json& overrides) {
    nlohmann::json j = to_json(base);
    overlay(j, overrides, "");
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& s = j.at("data").at("synth");
        c.synth.n_clips = s.at("n_clips").get<int>();
        c.synth.feature_dim = s.at("feature_dim").get<int>();
        c.synth.length_range = {s.at("length_min").get<int>(), s.at("length_max").get<int>()};
        c.synth.n_families = s.at("n_families").get<int>();
        c.synth.fps = s.at("fps").get<double>();
        c.synth.noise = s.at("noise").get<double>();

        const auto& v = j.at("vqvae");
        c.vqvae.codebook_size = v.at("codebook_size").get<int>();
        c.vqvae.latent_dim = v.at("latent_dim").get<int>();
        c.vqvae.downsample = v.at("downsample").get<int>();
        c.vqvae.hidden = v.at("hidden").get<int>();
        c.vqvae.beta = v.at("beta").get<double>();
        c.vq_train.steps = v.at("steps").get<int>();
        c.vq_train.lr = v.at("lr").get<double>();
        c.vq_train.batch_size = v.at("batch_size").get<int>();
        c.vq_train.window = v.at("window").get<int>();
        c.vq_train.warmup_steps = v.at("warmup_steps").get<int>();

        const auto& l = j.at("lm");
        const auto& m = l.at("model");
        c.lm.n_layers = m.at("n_layers").get<int>();
        c.lm.n_heads = m.at("n_heads").get<int>();
        c.lm.model_dim = m.at("model_dim").get<int>();
        c.lm.ffn_dim = m.at("ffn_dim").get<int>();
        c.lm.max_seq_len = m.at("max_seq_len").get<int>();
        c.lm.tie_head = m.at("tie_head").get<bool>();
        c.pretrain = schedule_from(l.at("pretrain"));
        c.lora = lm::lora_config_from_json(l.at("lora"));
        c.lora_schedule = schedule_from(l.at("schedule"));
        c.digit_mode = l.at("digit_mode").get<bool>();
        c.variant = instr::variant_from_string(l.at("variant").get<std::string>());
        c.tasks.clear();
        for (const auto& t : l.at("tasks")) c.tasks.push_back(instr::task_from_string(t.get<std::string>()));

        const auto& g = j.at("generate");
        c.sampling.mode = gen::sampling_mode_from_string(g.at("mode").get<std::string>());
        c.sampling.k = g.at("k").get<int>();
        c.sampling.temperature = g.at("temperature").get<double>();
        c.sampling.max_new_tokens = g.at("max_new_tokens").get<int>();
        c.budget_factor = g.at("budget_factor").get<double>();

        const auto& e = j.at("eval");
        c.eval_split = data::split_from_string(e.at("split").get<std::string>());
        c.eval.r_precision_pool = e.at("r_precision_pool").get<int>();
        c.eval.diversity_subset = e.at("diversity_subset").get<int>();
        const std::string vm = e.at("vel_mode").get<std::string>();
        if (vm != "boundary" && vm != "window") throw ConfigError("config: eval.vel_mode must be boundary|window");
        c.eval.vel_mode = vm == "boundary" ? eval::VelMode::Boundary : eval::VelMode::Window;
        const auto& x = e.at("extractor");
        c.extractor.width = x.at("width").get<int>();
        c.extractor.hidden = x.at("hidden").get<int>();
        c.extractor.steps = x.at("steps").get<int>();
        c.extractor.lr = x.at("lr").get<double>();
        c.extractor.margin = x.at("margin").get<double>();
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    }
    if (c.tasks.empty()) throw ConfigError("config: lm.tasks is empty");
    if (c.vqvae.codebook_size < 1 || c.vqvae.downsample < 1) throw ConfigError("config: vqvae sizes must be positive");
    c.lora.validate();
    c.pretrain.validate();
    c.lora_schedule.validate();
    return c;
}

RunConfig run_config_from_json(const nlohmann::json& j) { return merge(RunConfig{}, j); }

std::uint64_t derive_seed(std::uint64_t global, std::string_view component) {
    return io::fnv1a64(std::to_string(global) + ":" + std::string(component));
}

std::string config_hash(const RunConfig& c) { return io::hex64(io::fnv1a64(to_json(c).dump())); }

// --- stages --------------------------------------------------------------------

data::Corpus prepare_synth(const RunConfig& c) {
    data::SynthOptions o = c.synth;
    o.seed = derive_seed(c.seed, "synth");
    return data::synth_corpus(o);
}

vq::VqTrainResult train_vqvae_stage(const data::Corpus& corpus, const RunConfig& c) {
    vq::VqVaeConfig vc = c.vqvae;
    vc.feature_dim = static_cast<int>(corpus.feature_dim);
    vq::VqTrainConfig tc = c.vq_train;
    tc.seed = derive_seed(c.seed, "vqvae");
    return vq::train_vqvae(corpus, vc, tc);
}

std::vector<instr::InstructionSample> instructions_stage(const data::Corpus& corpus, const vq::VqVae& vqvae,
                                                         const RunConfig& c, data::Split split,
                                                         const std::vector<instr::TaskKind>& tasks) {
    instr::CorpusBuildOptions o;
    o.kinds = tasks;
    o.variant = c.variant;
    o.split = split;
    o.seed = derive_seed(c.seed, "instructions");
    return instr::build_instruction_corpus(corpus, vqvae, o);
}

BaseStage base_stage(const std::vector<instr::InstructionSample>& instructions, int motion_vocab, const RunConfig& c) {
    BaseStage b;
    b.vocab = lm::Vocabulary::build(instructions, motion_vocab, c.digit_mode);
    const lm::LmConfig cfg = lm::fit_config(c.lm, b.vocab, instructions, c.budget_factor);
    b.budget = lm::answer_budget(b.vocab, instructions, c.budget_factor);
    b.model = lm::TransformerLm(cfg, derive_seed(c.seed, "base"));
    lm::LmSchedule s = c.pretrain;
    s.seed = derive_seed(c.seed, "pretrain");
    b.log = lm::pretrain_base(b.model, b.vocab, instructions, s);
    return b;
}

lm::LoraTrainResult lora_stage(BaseStage& base, const std::vector<instr::InstructionSample>& instructions,
                               const RunConfig& c, double epoch_share, std::string_view salt) {
    lm::LmSchedule s = c.lora_schedule;
    s.seed = derive_seed(c.seed, salt);
    s.steps = std::max(1, static_cast<int>(std::lround(s.steps * epoch_share)));
    return lm::train_lora(base.model, base.vocab, instructions, c.lora, s);
}

eval::ExtractorTrainResult extractor_stage(const data::Corpus& corpus, const RunConfig& c) {
    eval::ExtractorConfig x = c.extractor;
    x.seed = derive_seed(c.seed, "extractor");
    return eval::train_bi_encoder(corpus, x);
}

gen::SamplingConfig sampling_for(const RunConfig& c, int budget) {
    gen::SamplingConfig s = c.sampling;
    if (s.max_new_tokens <= 0) s.max_new_tokens = budget;
    s.seed = derive_seed(c.seed, "sampling");
    return s;
}

std::vector<eval::EvalItem> eval_items(const gen::BatchOutput& out) {
    std::vector<eval::EvalItem> items;
    for (const auto& b : out.items) {
        eval::EvalItem it;
        it.motion_id = b.motion_id;
        it.text = b.text;
        it.task = b.task;
        it.positions = b.condition.positions;
        if (b.result) it.generated = b.result->motion;
        items.push_back(std::move(it));
    }
    return items;
}

eval::EvalReport evaluate_task(const data::Corpus& corpus, const gen::Models& models,
                               const eval::FeatureExtractor& fx, const RunConfig& c, instr::TaskKind task,
                               int budget) {
    const gen::SamplingConfig s = sampling_for(c, budget);
    const gen::BatchOutput out = gen::batch_generate(corpus, c.eval_split, task, models, s,
                                                     derive_seed(c.seed, std::string("conditions:") +
                                                                             std::string(instr::to_string(task))));
    eval::EvalConfig ec = c.eval;
    ec.seed = derive_seed(c.seed, "eval");
    ec.sampling = gen::to_json(s);
    eval::EvalReport r = eval::evaluate(eval_items(out), corpus, fx, ec);
    r.config["task"] = std::string(instr::to_string(task));
    r.config["generation_failures"] = out.failures;
    return r;
}

PipelineResult run_pipeline(const data::Corpus& corpus, const RunConfig& c) {
    PipelineResult res;
    vq::VqTrainResult vq = train_vqvae_stage(corpus, c);
    res.vq_log = vq.log;
    const auto train_instr = instructions_stage(corpus, vq.model, c, data::Split::Train, c.tasks);
    BaseStage base = base_stage(train_instr, c.vqvae.codebook_size, c);
    res.pretrain_log = base.log;
    lm::LoraTrainResult lora = lora_stage(base, train_instr, c);
    res.lora_log = lora.log;
    eval::ExtractorTrainResult fx = extractor_stage(corpus, c);
    res.extractor_log = fx.log;

    gen::Models models{&vq.model, &base.model, &lora.adapter, &base.vocab, c.variant};
    nlohmann::json tasks = nlohmann::json::object();
    for (auto t : c.tasks) {
        tasks[std::string(instr::to_string(t))] = evaluate_task(corpus, models, fx.extractor, c, t, base.budget).to_json();
    }
    res.report = {{"tasks", tasks},
                  {"training",
                   {{"vqvae_initial_recon_mse", vq.log.initial_recon_mse},
                    {"vqvae_final_recon_mse", vq.log.final_recon_mse},
                    {"codebook_usage", vq.log.usage_fraction},
                    {"pretrain_final_loss", base.log.final_loss},
                    {"lora_initial_loss", lora.log.initial_loss},
                    {"lora_final_loss", lora.log.final_loss},
                    {"trainable_ratio", lm::trainable_ratio(lora.adapter, base.model.config())},
                    {"extractor_val_matched_rate", fx.log.val_matched_rate}}},
                  {"config_hash", config_hash(c)}};
    return res;
}

}  // namespace mgpt::pipeline
