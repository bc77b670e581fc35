// SPDX-License-Identifier: Apache-2.0

#include "mgpt/instruction.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mgpt::instr {

namespace {

std::string_view slot(TaskKind k) {
    switch (k) {
        case TaskKind::TextInit: return "init";
        case TaskKind::TextLast: return "last";
        case TaskKind::TextKey: return "key";
        case TaskKind::TextOnly: break;
    }
    return "";
}

std::string join_indices(const MotionTokenSeq& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += ", ";
        out += std::to_string(tokens.indices[i]);
    }
    return out;
}

bool is_end_marker(std::string_view item) {
    return item == "</s>" || item == "<eos>" || item == "<EOS>" || item == "[EOS]";
}

}  // namespace

std::string_view to_string(TaskKind k) {
    switch (k) {
        case TaskKind::TextOnly: return "text";
        case TaskKind::TextInit: return "init";
        case TaskKind::TextLast: return "last";
        case TaskKind::TextKey: return "key";
    }
    return "text";
}

TaskKind task_from_string(std::string_view s) {
    if (s == "text") return TaskKind::TextOnly;
    if (s == "init") return TaskKind::TextInit;
    if (s == "last") return TaskKind::TextLast;
    if (s == "key") return TaskKind::TextKey;
    throw ConfigError("unknown task '" + std::string(s) + "' (expected text|init|last|key)");
}

std::string_view to_string(PromptVariant v) {
    switch (v) {
        case PromptVariant::V0: return "V0";
        case PromptVariant::V1: return "V1";
        case PromptVariant::V2: return "V2";
    }
    return "V0";
}

PromptVariant variant_from_string(std::string_view s) {
    if (s == "V0" || s == "v0") return PromptVariant::V0;
    if (s == "V1" || s == "v1") return PromptVariant::V1;
    if (s == "V2" || s == "v2") return PromptVariant::V2;
    throw ConfigError("unknown prompt variant '" + std::string(s) + "'");
}

std::string_view preamble(PromptVariant v) {
    if (v == PromptVariant::V1) {
        return "Human motion can be represented by token indices by VQ-VAE. Below is an instruction that describes "
               "human motion generation condition types, paired with an input that provides specific conditions. "
               "Write a sequence of tokens matching with given conditions.";
    }
    return "Below is an instruction that describes a task, paired with an input that provides further context. "
           "Write a response that appropriately completes the request.";
}

std::string render_task_prompt(TaskKind kind, PromptVariant variant) {
    const bool with_pose = kind != TaskKind::TextOnly;
    const std::string s(slot(kind));
    switch (variant) {
        case PromptVariant::V0:
            return with_pose ? "Generate a sequence of motion tokens matching the following human motion description "
                               "given the " + s + " pose tokens."
                             : "Generate a sequence of motion tokens matching the following human motion description.";
        case PromptVariant::V1:
            return with_pose ? "Motion description and the " + s + " pose tokens." : "Motion description.";
        case PromptVariant::V2:
            return with_pose ? "Generate the token sequence of the given human motion description under the premise "
                               "of the given " + s + " pose tokens."
                             : "Generate the token sequence of the given human motion description.";
    }
    return {};
}

std::string encode_motion_tokens(const MotionTokenSeq& tokens) {
    if (tokens.empty()) throw DomainError("encode_motion_tokens: empty token sequence");
    return std::string(kMotionOpen) + join_indices(tokens) + std::string(kMotionClose);
}

std::string encode_answer(const MotionTokenSeq& tokens) {
    if (tokens.empty()) throw DomainError("encode_answer: empty token sequence");
    return join_indices(tokens);
}

InstructionSample build_instruction(TaskKind kind, std::string_view text,
                                    const std::optional<MotionTokenSeq>& pose_tokens,
                                    const MotionTokenSeq& answer_tokens, PromptVariant variant) {
    if (kind == TaskKind::TextOnly && pose_tokens.has_value()) {
        throw DomainError("build_instruction: text-only task must not carry pose tokens");
    }
    if (kind != TaskKind::TextOnly && !pose_tokens.has_value()) {
        throw DomainError("build_instruction: task '" + std::string(to_string(kind)) + "' requires pose tokens");
    }
    InstructionSample s;
    s.kind = kind;
    s.variant = variant;
    s.instruction = render_task_prompt(kind, variant);
    s.input = std::string(text);
    if (pose_tokens) s.input += encode_motion_tokens(*pose_tokens);
    s.output = encode_answer(answer_tokens);
    return s;
}

std::string render_full_prompt(const InstructionSample& sample, bool include_answer) {
    std::string out(preamble(sample.variant));
    out += "\n\n";
    out += kInstructionMarker;
    out += "\n" + sample.instruction + "\n\n";
    out += kInputMarker;
    out += "\n" + sample.input + "\n\n";
    out += kResponseMarker;
    if (include_answer) out += sample.output;
    return out;
}

ParsedAnswer parse_motion_answer(std::string_view text, int vocab_size, bool strict) {
    ParsedAnswer out;
    std::size_t i = 0;
    long item_index = 0;
    auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (i < text.size()) {
        while (i < text.size() && is_sep(text[i])) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !is_sep(text[j])) ++j;
        const std::string_view item = text.substr(i, j - i);
        i = j;
        if (is_end_marker(item)) {
            out.saw_end_marker = true;
            break;
        }
        int value = -1;
        const bool digits = std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; });
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (!digits || ec != std::errc() || ptr != item.data() + item.size()) {
            if (digits) {
                throw ParseError("motion answer: index at position " + std::to_string(item_index) + " overflows",
                                 std::string(text), item_index);
            }
            if (strict) {
                throw ParseError("motion answer: non-numeric item '" + std::string(item) + "' at position " +
                                     std::to_string(item_index),
                                 std::string(text), item_index);
            }
            out.truncated = true;
            break;
        }
        if (value >= vocab_size) {
            throw ParseError("motion answer: index " + std::to_string(value) + " at position " +
                                 std::to_string(item_index) + " is outside [0, " + std::to_string(vocab_size) + ")",
                             std::string(text), item_index);
        }
        out.tokens.indices.push_back(value);
        ++out.consumed;
        ++item_index;
    }
    if (out.tokens.empty()) throw ParseError("motion answer: no valid motion tokens", std::string(text));
    return out;
}

int condition_window_frames(int downsample) {
    if (downsample < 1) throw DomainError("condition window: downsample must be >= 1");
    return ((4 + downsample - 1) / downsample) * downsample;
}

MotionTokenSeq condition_tokens(const Matrix& frames, TaskKind kind, const vq::VqVae& vqvae) {
    if (kind == TaskKind::TextOnly) throw DomainError("condition_tokens: text-only task has no pose condition");
    if (frames.rows() < 1) throw DomainError("condition_tokens: no condition frames");
    const int f = vqvae.config().downsample;
    if (kind == TaskKind::TextKey) {
        MotionTokenSeq out;
        for (Eigen::Index r = 0; r < frames.rows(); ++r) {
            data::MotionSequence w;
            w.frames = frames.row(r).replicate(f, 1);
            out.indices.push_back(vqvae.tokenize(w).indices.front());
        }
        return out;
    }
    if (frames.rows() < f) {
        throw DomainError("condition_tokens: " + std::to_string(frames.rows()) + " frames given, at least " +
                          std::to_string(f) + " needed");
    }
    data::MotionSequence w;
    w.frames = frames;
    return vqvae.tokenize(w);
}

PoseCondition sample_pose_condition(const data::MotionSequence& gt, TaskKind kind, Rng& rng, const vq::VqVae& vqvae) {
    if (kind == TaskKind::TextOnly) throw DomainError("sample_pose_condition: text-only task has no pose condition");
    const auto T = static_cast<int>(gt.length());
    PoseCondition c;
    if (kind == TaskKind::TextKey) {
        if (T < kKeyMax) {
            throw DomainError("sample_pose_condition: key task needs at least " + std::to_string(kKeyMax) +
                              " frames, motion '" + gt.source_id + "' has " + std::to_string(T));
        }
        const auto count = static_cast<int>(rng.uniform_int(kKeyMin, kKeyMax));
        std::vector<int> all(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) all[static_cast<std::size_t>(t)] = t;
        // Partial Fisher-Yates: the first `count` slots are a uniform subset.
        for (int i = 0; i < count; ++i) {
            const auto j = static_cast<int>(rng.uniform_int(i, T - 1));
            std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
        }
        c.positions.assign(all.begin(), all.begin() + count);
        std::sort(c.positions.begin(), c.positions.end());
    } else {
        const int w = condition_window_frames(vqvae.config().downsample);
        if (T < w) {
            throw DomainError("sample_pose_condition: motion '" + gt.source_id + "' has " + std::to_string(T) +
                              " frames, the condition window needs " + std::to_string(w));
        }
        const int start = kind == TaskKind::TextInit ? 0 : T - w;
        for (int t = 0; t < w; ++t) c.positions.push_back(start + t);
    }
    c.frames.resize(static_cast<Eigen::Index>(c.positions.size()), gt.dim());
    for (std::size_t i = 0; i < c.positions.size(); ++i) {
        c.frames.row(static_cast<Eigen::Index>(i)) = gt.frames.row(c.positions[i]);
    }
    c.tokens = condition_tokens(c.frames, kind, vqvae);
    return c;
}

nlohmann::json to_json(const InstructionSample& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"instruction", s.instruction},
            {"input", s.input},
            {"output", s.output},
            {"motion_id", s.motion_id},
            {"positions", s.positions},
            {"variant", std::string(to_string(s.variant))}};
}

InstructionSample sample_from_json(const nlohmann::json& j) {
    InstructionSample s;
    try {
        s.kind = task_from_string(j.at("kind").get<std::string>());
        s.instruction = j.at("instruction").get<std::string>();
        s.input = j.at("input").get<std::string>();
        s.output = j.at("output").get<std::string>();
        s.motion_id = j.value("motion_id", std::string());
        s.positions = j.value("positions", std::vector<int>{});
        s.variant = variant_from_string(j.value("variant", std::string("V0")));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("instruction record: ") + e.what());
    }
    return s;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionSample>& samples) {
    std::string out;
    for (const auto& s : samples) out += to_json(s).dump() + "\n";
    io::write_file_atomic(path, out);
}

std::vector<InstructionSample> read_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open instruction corpus: " + path.string());
    std::vector<InstructionSample> out;
    std::string line;
    long lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<InstructionSample> build_instruction_corpus(const data::Corpus& corpus, const vq::VqVae& vqvae,
                                                        const CorpusBuildOptions& o) {
    Rng rng(o.seed);
    std::vector<InstructionSample> out;
    for (std::size_t i = 0; i < corpus.motions.size(); ++i) {
        if (corpus.split_of[i] != o.split) continue;
        const data::MotionSequence m = data::normalize(corpus.motions[i], corpus.stats);
        const MotionTokenSeq answer = vqvae.tokenize(m);
        for (const auto& ann : corpus.annotations_for(m.source_id)) {
            for (TaskKind kind : o.kinds) {
                if (kind == TaskKind::TextKey && m.length() < kKeyMax) continue;
                std::optional<MotionTokenSeq> pose;
                std::vector<int> positions;
                if (kind != TaskKind::TextOnly) {
                    PoseCondition c = sample_pose_condition(m, kind, rng, vqvae);
                    pose = c.tokens;
                    positions = c.positions;
                }
                InstructionSample s = build_instruction(kind, ann.text, pose, answer, o.variant);
                s.motion_id = m.source_id;
                s.positions = std::move(positions);
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

}  // namespace mgpt::instr
