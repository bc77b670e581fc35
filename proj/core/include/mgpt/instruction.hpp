// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/motion_data.hpp"
#include "mgpt/tokens.hpp"
#include "mgpt/vqvae.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mgpt::instr {

enum class TaskKind { TextOnly, TextInit, TextLast, TextKey };
enum class PromptVariant { V0, V1, V2 };

/// CLI spelling: "text", "init", "last", "key".
std::string_view to_string(TaskKind k);
TaskKind task_from_string(std::string_view s);
std::string_view to_string(PromptVariant v);
PromptVariant variant_from_string(std::string_view s);

inline constexpr std::string_view kMotionOpen = "<Motion Token>";
inline constexpr std::string_view kMotionClose = "</Motion Token>";
inline constexpr std::string_view kInstructionMarker = "### Instruction:";
inline constexpr std::string_view kInputMarker = "### Input:";
inline constexpr std::string_view kResponseMarker = "### Response:";

struct InstructionSample {
    std::string instruction;
    std::string input;
    std::string output;
    TaskKind kind = TaskKind::TextOnly;
    PromptVariant variant = PromptVariant::V0;
    std::string motion_id;
    std::vector<int> positions;  // condition frame indices in the ground truth
};

std::string_view preamble(PromptVariant v);
std::string render_task_prompt(TaskKind kind, PromptVariant variant);

/// "<Motion Token>1, 2, 3</Motion Token>"
std::string encode_motion_tokens(const MotionTokenSeq& tokens);
/// "1, 2, 3", the answer form.
std::string encode_answer(const MotionTokenSeq& tokens);

InstructionSample build_instruction(TaskKind kind, std::string_view text,
                                    const std::optional<MotionTokenSeq>& pose_tokens,
                                    const MotionTokenSeq& answer_tokens, PromptVariant variant = PromptVariant::V0);

/// Preamble, then the instruction, input and response sections.
/// With `include_answer` the sample's output is appended verbatim.
std::string render_full_prompt(const InstructionSample& sample, bool include_answer);

struct ParsedAnswer {
    MotionTokenSeq tokens;
    bool truncated = false;      // stopped at a non-conforming item
    bool saw_end_marker = false;
    std::size_t consumed = 0;    // number of items accepted
};

/// Reads decimal indices separated by commas and/or whitespace. Stops at an
/// end-of-sequence marker, or (unless `strict`) at the first item that is not
/// a decimal integer. Indices >= vocab_size are rejected with their position.
ParsedAnswer parse_motion_answer(std::string_view text, int vocab_size, bool strict = false);

struct PoseCondition {
    Matrix frames;               // condition frames, normalized space
    MotionTokenSeq tokens;       // what goes between the motion delimiters
    std::vector<int> positions;  // frame indices in the ground truth
};

/// Frames in an init/last window: ceil(4 / f) whole downsample windows.
int condition_window_frames(int downsample);
inline constexpr int kKeyMin = 12;
inline constexpr int kKeyMax = 20;

/// init: leading window; last: trailing window; key: a uniform count in
/// [12, 20] of distinct frames at sorted random positions.
PoseCondition sample_pose_condition(const data::MotionSequence& gt, TaskKind kind, Rng& rng, const vq::VqVae& vqvae);

/// Tokens for explicitly supplied condition frames (normalized space). A key
/// frame is tokenized as a static window of f copies of itself; init/last
/// windows are tokenized as a motion.
MotionTokenSeq condition_tokens(const Matrix& frames, TaskKind kind, const vq::VqVae& vqvae);

// --- instruction corpus (JSON lines) ---------------------------------------

nlohmann::json to_json(const InstructionSample& s);
InstructionSample sample_from_json(const nlohmann::json& j);
void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> read_jsonl(const std::filesystem::path& path);

struct CorpusBuildOptions {
    std::vector<TaskKind> kinds{TaskKind::TextOnly, TaskKind::TextInit, TaskKind::TextLast, TaskKind::TextKey};
    PromptVariant variant = PromptVariant::V0;
    data::Split split = data::Split::Train;
    std::uint64_t seed = 0;
};

/// One sample per (annotation, kind) for motions of `split`; answers are the
/// full-clip tokens. Motions are normalized with `corpus.stats` first. Clips
/// shorter than kKeyMax frames get no key sample.
std::vector<InstructionSample> build_instruction_corpus(const data::Corpus& corpus, const vq::VqVae& vqvae,
                                                        const CorpusBuildOptions& options);

}  // namespace mgpt::instr
