// SPDX-License-Identifier: Apache-2.0

#include "mgpt/generator.hpp"

#include "mgpt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mgpt::gen {

std::string_view to_string(SamplingMode m) {
    switch (m) {
        case SamplingMode::Greedy: return "greedy";
        case SamplingMode::TopK: return "top-k";
        case SamplingMode::Temperature: return "temperature";
    }
    return "greedy";
}

SamplingMode sampling_mode_from_string(std::string_view s) {
    if (s == "greedy") return SamplingMode::Greedy;
    if (s == "top-k" || s == "topk") return SamplingMode::TopK;
    if (s == "temperature") return SamplingMode::Temperature;
    throw ConfigError("unknown sampling mode '" + std::string(s) + "' (expected greedy|top-k|temperature)");
}

void SamplingConfig::validate() const {
    if (max_new_tokens < 1) throw ConfigError("sampling: max_new_tokens must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("sampling: temperature must be positive");
    if (mode == SamplingMode::TopK && k < 1) throw ConfigError("sampling: k must be >= 1");
}

nlohmann::json to_json(const SamplingConfig& c) {
    return {{"mode", std::string(to_string(c.mode))},
            {"k", c.k},
            {"temperature", c.temperature},
            {"max_new_tokens", c.max_new_tokens},
            {"seed", c.seed}};
}

SamplingConfig sampling_from_json(const nlohmann::json& j) {
    SamplingConfig c;
    if (j.contains("mode")) c.mode = sampling_mode_from_string(j.at("mode").get<std::string>());
    c.k = j.value("k", c.k);
    c.temperature = j.value("temperature", c.temperature);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::Eos: return "eos";
        case StopReason::MaxLen: return "max_len";
        case StopReason::ParseStop: return "parse_stop";
    }
    return "max_len";
}

namespace {

int argmax_lowest(const RowVector& row) {
    int best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i) {
        if (row(i) > row(best)) best = static_cast<int>(i);
    }
    return best;
}

int sample_from(const RowVector& logits, const SamplingConfig& cfg, Rng& rng) {
    std::vector<int> cand(static_cast<std::size_t>(logits.size()));
    std::iota(cand.begin(), cand.end(), 0);
    if (cfg.mode == SamplingMode::TopK && cfg.k < static_cast<int>(cand.size())) {
        std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return logits(a) > logits(b); });
        cand.resize(static_cast<std::size_t>(cfg.k));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int c : cand) mx = std::max(mx, logits(c));
    std::vector<double> w(cand.size());
    double total = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        w[i] = std::exp((logits(cand[i]) - mx) / cfg.temperature);
        total += w[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        u -= w[i];
        if (u < 0.0) return cand[i];
    }
    return cand.back();
}

}  // namespace

TokenGeneration generate_tokens(const lm::TransformerLm& model, const lm::AdapterState* adapter,
                                const lm::Vocabulary& vocab, std::span<const int> prompt, const SamplingConfig& cfg,
                                Rng& rng) {
    cfg.validate();
    const int max_len = model.config().max_seq_len;
    if (prompt.empty()) throw DomainError("generate_tokens: empty prompt");
    const int answer_start = static_cast<int>(prompt.size());
    const int room = model.config().answer_offset > 0 ? max_len - model.config().answer_offset : max_len - answer_start;
    if (answer_start > (model.config().answer_offset > 0 ? model.config().answer_offset : max_len) ||
        cfg.max_new_tokens - 1 > room) {
        throw DomainError("generate_tokens: prompt of " + std::to_string(prompt.size()) + " ids plus a budget of " +
                          std::to_string(cfg.max_new_tokens) + " does not fit max_seq_len " + std::to_string(max_len));
    }
    std::vector<int> seq(prompt.begin(), prompt.end());
    TokenGeneration out;
    for (int step = 0; step < cfg.max_new_tokens; ++step) {
        const Matrix logits = model.logits(seq, adapter, answer_start);
        const RowVector last = logits.row(logits.rows() - 1);
        const int next = cfg.mode == SamplingMode::Greedy ? argmax_lowest(last) : sample_from(last, cfg, rng);
        out.ids.push_back(next);
        if (next == vocab.eos()) {
            out.stop = StopReason::Eos;
            return out;
        }
        if (!vocab.is_answer_token(next)) {
            out.stop = StopReason::ParseStop;
            return out;
        }
        seq.push_back(next);
    }
    out.stop = StopReason::MaxLen;
    return out;
}

TokenGeneration generate_tokens(const lm::TransformerLm& model, const lm::AdapterState* adapter,
                                const lm::Vocabulary& vocab, std::span<const int> prompt, const SamplingConfig& cfg) {
    Rng rng(cfg.seed);
    return generate_tokens(model, adapter, vocab, prompt, cfg, rng);
}

GenerationResult generate_motion(instr::TaskKind task, const std::string& text, const std::optional<Matrix>& pose_cond,
                                 const Models& m, const SamplingConfig& cfg, Rng& rng) {
    if (m.vqvae == nullptr || m.lm == nullptr || m.vocab == nullptr) {
        throw DomainError("generate_motion: models not loaded");
    }
    if (task == instr::TaskKind::TextOnly && pose_cond.has_value()) {
        throw DomainError("generate_motion: text-only task given a pose condition");
    }
    if (task != instr::TaskKind::TextOnly && !pose_cond.has_value()) {
        throw DomainError("generate_motion: task '" + std::string(instr::to_string(task)) +
                          "' requires a pose condition");
    }
    GenerationResult r;
    std::optional<MotionTokenSeq> pose;
    if (pose_cond) {
        r.condition_tokens = instr::condition_tokens(*pose_cond, task, *m.vqvae);
        pose = r.condition_tokens;
    }
    // The answer slot only matters for rendering with the answer attached;
    // the prompt stops at the response marker.
    MotionTokenSeq placeholder;
    placeholder.indices = {0};
    const instr::InstructionSample sample = instr::build_instruction(task, text, pose, placeholder, m.variant);
    r.prompt = instr::render_full_prompt(sample, false);
    r.prompt_ids = lm::encode_prompt(*m.vocab, sample);

    const TokenGeneration tg = generate_tokens(*m.lm, m.adapter, *m.vocab, r.prompt_ids, cfg, rng);
    r.generated_ids = tg.ids;
    r.stop = tg.stop;
    std::span<const int> answer_ids(tg.ids);
    if (tg.stop == StopReason::Eos) answer_ids = answer_ids.first(answer_ids.size() - 1);
    r.raw_answer = m.vocab->decode_answer(answer_ids);
    try {
        const instr::ParsedAnswer parsed = instr::parse_motion_answer(r.raw_answer, m.vqvae->config().codebook_size);
        r.tokens = parsed.tokens;
        r.truncated = parsed.truncated;
    } catch (const ParseError& e) {
        throw GenerationError(std::string("generate_motion: ") + e.what(), r.raw_answer);
    }
    r.motion = m.vqvae->detokenize(r.tokens);
    return r;
}

GenerationResult generate_motion(instr::TaskKind task, const std::string& text, const std::optional<Matrix>& pose_cond,
                                 const Models& models, const SamplingConfig& cfg) {
    Rng rng(cfg.seed);
    return generate_motion(task, text, pose_cond, models, cfg, rng);
}

BatchOutput batch_generate(const data::Corpus& corpus, data::Split split, instr::TaskKind task, const Models& models,
                           const SamplingConfig& cfg, std::uint64_t condition_seed) {
    BatchOutput out;
    Rng cond_rng(condition_seed);
    Rng sample_root(cfg.seed);
    std::uint64_t item_index = 0;
    for (std::size_t i = 0; i < corpus.motions.size(); ++i) {
        if (corpus.split_of[i] != split) continue;
        const data::MotionSequence gt = corpus.stats.empty() ? corpus.motions[i]
                                                             : data::normalize(corpus.motions[i], corpus.stats);
        for (const auto& ann : corpus.annotations_for(gt.source_id)) {
            BatchItem item;
            item.motion_id = gt.source_id;
            item.text = ann.text;
            item.task = task;
            Rng rng = sample_root.fork(item_index++);
            try {
                std::optional<Matrix> cond;
                if (task != instr::TaskKind::TextOnly) {
                    item.condition = instr::sample_pose_condition(gt, task, cond_rng, *models.vqvae);
                    cond = item.condition.frames;
                }
                item.result = generate_motion(task, ann.text, cond, models, cfg, rng);
            } catch (const Error& e) {
                item.error = e.what();
                ++out.failures;
            }
            out.items.push_back(std::move(item));
        }
    }
    return out;
}

}  // namespace mgpt::gen
