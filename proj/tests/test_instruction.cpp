// SPDX-License-Identifier: Apache-2.0

#include "mgpt/error.hpp"
#include "mgpt/instruction.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

namespace {

using namespace mgpt;
using instr::PromptVariant;
using instr::TaskKind;
using mgpt::testing::TempDir;

const char* kPreamble =
    "Below is an instruction that describes a task, paired with an input that provides further context. Write a "
    "response that appropriately completes the request.";
const char* kPreambleV1 =
    "Human motion can be represented by token indices by VQ-VAE. Below is an instruction that describes human motion "
    "generation condition types, paired with an input that provides specific conditions. Write a sequence of tokens "
    "matching with given conditions.";

MotionTokenSeq toks(std::vector<int> v) {
    MotionTokenSeq t;
    t.indices = std::move(v);
    return t;
}

std::string full(const char* pre, const std::string& instruction, const std::string& input) {
    return std::string(pre) + "\n\n### Instruction:\n" + instruction + "\n\n### Input:\n" + input + "\n\n### Response:";
}

TEST(Golden, V0AllTasks) {
    const std::string text = "a person walks forward";
    const auto ans = toks({7, 9});
    EXPECT_EQ(instr::render_full_prompt(instr::build_instruction(TaskKind::TextOnly, text, std::nullopt, ans), false),
              full(kPreamble,
                   "Generate a sequence of motion tokens matching the following human motion description.",
                   "a person walks forward"));
    EXPECT_EQ(instr::render_full_prompt(instr::build_instruction(TaskKind::TextInit, text, toks({12}), ans), false),
              full(kPreamble,
                   "Generate a sequence of motion tokens matching the following human motion description given the "
                   "init pose tokens.",
                   "a person walks forward<Motion Token>12</Motion Token>"));
    EXPECT_EQ(instr::render_full_prompt(instr::build_instruction(TaskKind::TextLast, text, toks({3}), ans), false),
              full(kPreamble,
                   "Generate a sequence of motion tokens matching the following human motion description given the "
                   "last pose tokens.",
                   "a person walks forward<Motion Token>3</Motion Token>"));
    EXPECT_EQ(instr::render_full_prompt(instr::build_instruction(TaskKind::TextKey, text, toks({5, 0, 61}), ans), false),
              full(kPreamble,
                   "Generate a sequence of motion tokens matching the following human motion description given the "
                   "key pose tokens.",
                   "a person walks forward<Motion Token>5, 0, 61</Motion Token>"));
}

TEST(Golden, V1AndV2Variants) {
    const auto ans = toks({1});
    EXPECT_EQ(instr::render_full_prompt(
                  instr::build_instruction(TaskKind::TextOnly, "x", std::nullopt, ans, PromptVariant::V1), false),
              full(kPreambleV1, "Motion description.", "x"));
    EXPECT_EQ(instr::render_full_prompt(
                  instr::build_instruction(TaskKind::TextKey, "x", toks({2, 4}), ans, PromptVariant::V1), false),
              full(kPreambleV1, "Motion description and the key pose tokens.", "x<Motion Token>2, 4</Motion Token>"));
    EXPECT_EQ(instr::render_full_prompt(
                  instr::build_instruction(TaskKind::TextOnly, "x", std::nullopt, ans, PromptVariant::V2), false),
              full(kPreamble, "Generate the token sequence of the given human motion description.", "x"));
    EXPECT_EQ(instr::render_full_prompt(
                  instr::build_instruction(TaskKind::TextInit, "x", toks({8}), ans, PromptVariant::V2), false),
              full(kPreamble,
                   "Generate the token sequence of the given human motion description under the premise of the "
                   "given init pose tokens.",
                   "x<Motion Token>8</Motion Token>"));
}

TEST(Golden, AnswerAppendsBareTokenList) {
    const auto s = instr::build_instruction(TaskKind::TextOnly, "t", std::nullopt, toks({7, 9, 12}));
    EXPECT_EQ(s.output, "7, 9, 12");
    EXPECT_EQ(instr::render_full_prompt(s, true), instr::render_full_prompt(s, false) + "7, 9, 12");
}

TEST(Build, ConditionMismatchIsDomainError) {
    EXPECT_THROW(instr::build_instruction(TaskKind::TextOnly, "t", toks({1}), toks({1})), DomainError);
    EXPECT_THROW(instr::build_instruction(TaskKind::TextInit, "t", std::nullopt, toks({1})), DomainError);
    EXPECT_THROW(instr::encode_motion_tokens(MotionTokenSeq{}), DomainError);
    EXPECT_THROW(instr::encode_answer(MotionTokenSeq{}), DomainError);
}

TEST(Parse, RoundTripRandomSequences) {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        MotionTokenSeq t;
        const auto n = rng.uniform_int(1, 40);
        for (long j = 0; j < n; ++j) t.indices.push_back(static_cast<int>(rng.uniform_int(0, 511)));
        const auto p = instr::parse_motion_answer(instr::encode_answer(t), 512);
        ASSERT_EQ(p.tokens, t);
        ASSERT_FALSE(p.truncated);
    }
}

TEST(Parse, Cases) {
    auto p = instr::parse_motion_answer(" 4,5 ,6\n", 64);
    EXPECT_EQ(p.tokens.indices, (std::vector<int>{4, 5, 6}));

    p = instr::parse_motion_answer("4, 5, cat, 6", 64);
    EXPECT_EQ(p.tokens.indices, (std::vector<int>{4, 5}));
    EXPECT_TRUE(p.truncated);
    EXPECT_EQ(p.consumed, 2u);
    EXPECT_THROW(instr::parse_motion_answer("4, 5, cat, 6", 64, true), ParseError);

    p = instr::parse_motion_answer("1, 2 </s> 3", 64);
    EXPECT_EQ(p.tokens.indices, (std::vector<int>{1, 2}));
    EXPECT_TRUE(p.saw_end_marker);
    EXPECT_FALSE(p.truncated);

    try {
        instr::parse_motion_answer("1, 2, 64", 64);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position(), 2);
        EXPECT_EQ(e.raw_text(), "1, 2, 64");
    }
    try {
        instr::parse_motion_answer("nothing here", 64);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.raw_text(), "nothing here");
    }
    EXPECT_THROW(instr::parse_motion_answer("", 64), ParseError);
    EXPECT_THROW(instr::parse_motion_answer("-3", 64), ParseError);
    EXPECT_THROW(instr::parse_motion_answer("99999999999999999999", 64), ParseError);
}

class PoseConditions : public ::testing::Test {
protected:
    vq::VqVae model{vq::VqVaeConfig{}, 1};
    Rng rng{2};
    data::MotionSequence clip(int T) {
        data::MotionSequence m{rng.normal_matrix(T, 32, 1.0)};
        m.source_id = "c";
        return m;
    }
};

TEST_F(PoseConditions, WindowFrames) {
    EXPECT_EQ(instr::condition_window_frames(4), 4);
    EXPECT_EQ(instr::condition_window_frames(1), 4);
    EXPECT_EQ(instr::condition_window_frames(3), 6);
    EXPECT_EQ(instr::condition_window_frames(8), 8);
}

TEST_F(PoseConditions, InitAndLastWindows) {
    const auto gt = clip(16);
    const auto init = instr::sample_pose_condition(gt, TaskKind::TextInit, rng, model);
    EXPECT_EQ(init.positions, (std::vector<int>{0, 1, 2, 3}));
    const auto last = instr::sample_pose_condition(gt, TaskKind::TextLast, rng, model);
    EXPECT_EQ(last.positions, (std::vector<int>{12, 13, 14, 15}));
    EXPECT_EQ(last.frames, gt.frames.bottomRows(4));
    // One token per window at f=4, equal to the clip's own token there.
    const auto full = model.tokenize(gt);
    EXPECT_EQ(init.tokens.indices, std::vector<int>{full.indices.front()});
    EXPECT_EQ(last.tokens.indices, std::vector<int>{full.indices.back()});
}

TEST_F(PoseConditions, KeyCountAndOrderProperty) {
    const auto gt = clip(40);
    std::set<int> counts;
    for (int i = 0; i < 1000; ++i) {
        const auto k = instr::sample_pose_condition(gt, TaskKind::TextKey, rng, model);
        const auto n = static_cast<int>(k.positions.size());
        ASSERT_GE(n, instr::kKeyMin);
        ASSERT_LE(n, instr::kKeyMax);
        counts.insert(n);
        ASSERT_TRUE(std::is_sorted(k.positions.begin(), k.positions.end()));
        ASSERT_EQ(std::set<int>(k.positions.begin(), k.positions.end()).size(), k.positions.size());
        ASSERT_GE(k.positions.front(), 0);
        ASSERT_LT(k.positions.back(), 40);
        ASSERT_EQ(k.tokens.size(), k.positions.size());
    }
    EXPECT_EQ(counts.size(), 9u);  // every count in [12, 20] shows up
}

TEST_F(PoseConditions, KeyNeedsTwentyFrames) {
    EXPECT_THROW(instr::sample_pose_condition(clip(19), TaskKind::TextKey, rng, model), DomainError);
    EXPECT_NO_THROW(instr::sample_pose_condition(clip(20), TaskKind::TextKey, rng, model));
    EXPECT_THROW(instr::sample_pose_condition(clip(3), TaskKind::TextInit, rng, model), DomainError);
    EXPECT_THROW(instr::sample_pose_condition(clip(30), TaskKind::TextOnly, rng, model), DomainError);
}

TEST_F(PoseConditions, KeyTokensAreReplicatedFrameTokens) {
    const auto gt = clip(24);
    const auto k = instr::sample_pose_condition(gt, TaskKind::TextKey, rng, model);
    for (std::size_t i = 0; i < k.positions.size(); ++i) {
        data::MotionSequence rep{gt.frames.row(k.positions[i]).replicate(4, 1)};
        EXPECT_EQ(k.tokens.indices[i], model.tokenize(rep).indices.front());
    }
}

TEST(Jsonl, RoundTripAndLineNumbers) {
    TempDir dir("jsonl");
    std::vector<instr::InstructionSample> v;
    v.push_back(instr::build_instruction(TaskKind::TextOnly, "a \"quoted\" text", std::nullopt, toks({1, 2})));
    v.push_back(instr::build_instruction(TaskKind::TextKey, "b", toks({3, 4}), toks({5}), PromptVariant::V2));
    v.back().positions = {2, 9};
    v.back().motion_id = "m1";
    instr::write_jsonl(dir / "c.jsonl", v);
    const auto back = instr::read_jsonl(dir / "c.jsonl");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(instr::to_json(back[i]), instr::to_json(v[i]));
        EXPECT_EQ(instr::render_full_prompt(back[i], true), instr::render_full_prompt(v[i], true));
    }
    {
        std::ofstream f(dir / "c.jsonl", std::ios::app);
        f << "{not json\n";
    }
    try {
        instr::read_jsonl(dir / "c.jsonl");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    }
}

TEST(CorpusBuild, AnswersAreFullClipTokens) {
    data::SynthOptions o;
    o.n_clips = 8;
    o.length_range = {24, 32};
    const data::Corpus c = data::synth_corpus(o);
    vq::VqVae model(vq::VqVaeConfig{}, 3);
    instr::CorpusBuildOptions opt;
    const auto samples = instr::build_instruction_corpus(c, model, opt);
    const auto train = c.motions_in(data::Split::Train);
    EXPECT_EQ(samples.size(), train.size() * 4);
    for (const auto& s : samples) {
        const auto* m = c.find(s.motion_id);
        ASSERT_NE(m, nullptr);
        EXPECT_EQ(s.output, instr::encode_answer(model.tokenize(data::normalize(*m, c.stats))));
        if (s.kind == TaskKind::TextOnly) {
            EXPECT_TRUE(s.positions.empty());
        } else {
            EXPECT_FALSE(s.positions.empty());
        }
    }
    EXPECT_EQ(instr::to_json(instr::build_instruction_corpus(c, model, opt).back()), instr::to_json(samples.back()));
}

TEST(CorpusBuild, ShortClipsSkipKeyTask) {
    data::SynthOptions o;
    o.n_clips = 8;
    o.length_range = {16, 16};
    const data::Corpus c = data::synth_corpus(o);
    vq::VqVae model(vq::VqVaeConfig{}, 3);
    const auto samples = instr::build_instruction_corpus(c, model, instr::CorpusBuildOptions{});
    EXPECT_EQ(samples.size(), c.motions_in(data::Split::Train).size() * 3);
    for (const auto& s : samples) EXPECT_NE(s.kind, TaskKind::TextKey);
}

}  // namespace
