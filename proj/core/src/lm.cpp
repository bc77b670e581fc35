// SPDX-License-Identifier: Apache-2.0

#include "mgpt/lm.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

namespace mgpt::lm {

namespace {

constexpr std::string_view kBaseMagic = "BASE1";
constexpr std::string_view kLoraMagic = "LORA1";

const std::vector<std::string>& known_targets() {
    static const std::vector<std::string> t{"q", "k", "v", "o", "ffn_in", "ffn_out"};
    return t;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string digit_token(int d) { return "<D:" + std::to_string(d) + ">"; }
constexpr std::string_view kSepToken = "<,>";

// Atomic strings recognised inside rendered prompts, longest first so a
// preamble never loses to a shorter marker that happens to prefix it.
std::vector<std::string> atomic_strings() {
    std::vector<std::string> a{std::string(instr::preamble(instr::PromptVariant::V0)),
                               std::string(instr::preamble(instr::PromptVariant::V1)),
                               std::string(instr::kMotionOpen),
                               std::string(instr::kMotionClose),
                               std::string(instr::kInstructionMarker),
                               std::string(instr::kInputMarker),
                               std::string(instr::kResponseMarker)};
    std::sort(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.size() > y.size(); });
    return a;
}

// Walks a rendered prompt and reports atomic strings, words and numbers in
// motion context. Shared by vocabulary building and encoding.
template <typename OnAtomic, typename OnWord, typename OnNumber>
void scan(std::string_view s, OnAtomic on_atomic, OnWord on_word, OnNumber on_number) {
    static const std::vector<std::string> atoms = atomic_strings();
    bool motion_ctx = false;
    std::size_t i = 0;
    while (i < s.size()) {
        const char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        bool matched = false;
        for (const auto& a : atoms) {
            if (s.compare(i, a.size(), a) == 0) {
                on_atomic(a);
                if (a == instr::kMotionOpen || a == instr::kResponseMarker) motion_ctx = true;
                if (a == instr::kMotionClose) motion_ctx = false;
                i += a.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (motion_ctx && (c == ',')) {
            ++i;
            continue;
        }
        if (motion_ctx && std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            on_number(s.substr(i, j - i));
            i = j;
            continue;
        }
        if (is_word_char(c)) {
            std::size_t j = i + 1;
            while (j < s.size() &&
                   (is_word_char(s[j]) ||
                    ((s[j] == '\'' || s[j] == '-') && j + 1 < s.size() && is_word_char(s[j + 1])))) {
                ++j;
            }
            on_word(s.substr(i, j - i));
            i = j;
            continue;
        }
        on_word(s.substr(i, 1));
        ++i;
    }
}

}  // namespace

// --- vocabulary --------------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            std::size_t j = i + 1;
            while (j < text.size() &&
                   (is_word_char(text[j]) ||
                    ((text[j] == '\'' || text[j] == '-') && j + 1 < text.size() && is_word_char(text[j + 1])))) {
                ++j;
            }
            out.emplace_back(text.substr(i, j - i));
            i = j;
            continue;
        }
        out.emplace_back(text.substr(i, 1));
        ++i;
    }
    return out;
}

std::vector<std::string> Vocabulary::structural_tokens(bool digit_mode) {
    std::vector<std::string> s{"<bos>",
                               "<eos>",
                               "<pad>",
                               "<unk>",
                               std::string(instr::kMotionOpen),
                               std::string(instr::kMotionClose),
                               std::string(instr::kInstructionMarker),
                               std::string(instr::kInputMarker),
                               std::string(instr::kResponseMarker),
                               std::string(instr::preamble(instr::PromptVariant::V0)),
                               std::string(instr::preamble(instr::PromptVariant::V1))};
    if (digit_mode) {
        for (int d = 0; d < 10; ++d) s.push_back(digit_token(d));
        s.emplace_back(kSepToken);
    }
    return s;
}

Vocabulary Vocabulary::build(const std::vector<instr::InstructionSample>& corpus, int motion_vocab_size,
                             bool digit_mode) {
    if (motion_vocab_size <= 0) throw DomainError("build_vocab: motion vocabulary size must be positive");
    if (corpus.empty()) throw DomainError("build_vocab: empty instruction corpus");
    std::set<std::string> words;
    for (const auto& s : corpus) {
        instr::InstructionSample prompt_only = s;
        scan(
            instr::render_full_prompt(prompt_only, false), [](const std::string&) {},
            [&](std::string_view w) { words.emplace(w); }, [](std::string_view) {});
    }
    Vocabulary v;
    v.digit_mode_ = digit_mode;
    v.tokens_.assign(words.begin(), words.end());
    v.text_count_ = static_cast<int>(v.tokens_.size());
    v.motion_count_ = motion_vocab_size;
    for (int k = 0; k < motion_vocab_size; ++k) v.tokens_.push_back("<M:" + std::to_string(k) + ">");
    for (auto& t : structural_tokens(digit_mode)) v.tokens_.push_back(std::move(t));
    v.index();
    return v;
}

void Vocabulary::index() {
    ids_.clear();
    for (int i = 0; i < size(); ++i) ids_.emplace(tokens_[static_cast<std::size_t>(i)], i);
    const int s0 = text_count_ + motion_count_;
    bos_ = s0;
    eos_ = s0 + 1;
    pad_ = s0 + 2;
    unk_ = s0 + 3;
    if (digit_mode_) {
        digit0_ = s0 + 11;
        sep_ = s0 + 21;
    } else {
        digit0_ = sep_ = -1;
    }
}

int Vocabulary::id(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    return it == ids_.end() ? unk_ : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw DomainError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::motion_id(int k) const {
    if (k < 0 || k >= motion_count_) {
        throw DomainError("vocabulary: motion index " + std::to_string(k) + " outside [0, " +
                          std::to_string(motion_count_) + ")");
    }
    return text_count_ + k;
}

bool Vocabulary::is_answer_token(int id) const {
    if (digit_mode_) return (id >= digit0_ && id < digit0_ + 10) || id == sep_;
    return is_motion(id);
}

std::vector<int> Vocabulary::encode_text(std::string_view rendered) const {
    std::vector<int> out;
    scan(
        rendered, [&](const std::string& a) { out.push_back(id(a)); },
        [&](std::string_view w) { out.push_back(id(w)); },
        [&](std::string_view num) {
            if (digit_mode_) {
                if (!out.empty() && (out.back() >= digit0_ && out.back() < digit0_ + 10)) out.push_back(sep_);
                for (char c : num) out.push_back(digit0_ + (c - '0'));
            } else {
                const int k = std::stoi(std::string(num));
                out.push_back(k < motion_count_ ? motion_id(k) : unk_);
            }
        });
    return out;
}

std::vector<int> Vocabulary::encode_answer(const MotionTokenSeq& tokens) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int k = tokens.indices[i];
        if (digit_mode_) {
            if (k < 0) throw DomainError("vocabulary: negative motion index");
            if (i > 0) out.push_back(sep_);
            for (char c : std::to_string(k)) out.push_back(digit0_ + (c - '0'));
        } else {
            out.push_back(motion_id(k));
        }
    }
    return out;
}

std::string Vocabulary::decode_answer(std::span<const int> ids) const {
    std::string out;
    bool first = true;
    for (int t : ids) {
        if (!is_answer_token(t)) {
            if (!out.empty()) out += ' ';
            out += token(t);
            break;
        }
        if (digit_mode_) {
            if (t == sep_) {
                out += ", ";
            } else {
                out += static_cast<char>('0' + (t - digit0_));
            }
        } else {
            if (!first) out += ", ";
            out += std::to_string(motion_index(t));
        }
        first = false;
    }
    return out;
}

nlohmann::json Vocabulary::to_json() const {
    return {{"tokens", tokens_},
            {"text_count", text_count_},
            {"motion_count", motion_count_},
            {"digit_mode", digit_mode_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    Vocabulary v;
    try {
        v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
        v.text_count_ = j.at("text_count").get<int>();
        v.motion_count_ = j.at("motion_count").get<int>();
        v.digit_mode_ = j.at("digit_mode").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("vocabulary record: ") + e.what());
    }
    const auto expected = static_cast<std::size_t>(v.text_count_ + v.motion_count_) +
                          structural_tokens(v.digit_mode_).size();
    if (v.tokens_.size() != expected) throw DataError("vocabulary record: token count does not match its layout");
    v.index();
    return v;
}

// --- configuration -----------------------------------------------------------

void LmConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || model_dim < 1 || ffn_dim < 1 || max_seq_len < 2) {
        throw ConfigError("lm config: layer, head, width and length settings must be positive");
    }
    if (model_dim % n_heads != 0) {
        throw ConfigError("lm config: model_dim " + std::to_string(model_dim) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (vocab_size < 1) throw ConfigError("lm config: vocab_size not set");
    if (answer_offset < 0 || answer_offset >= max_seq_len) {
        throw ConfigError("lm config: answer_offset must lie in [0, max_seq_len)");
    }
}

nlohmann::json to_json(const LmConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},         {"model_dim", c.model_dim},
            {"ffn_dim", c.ffn_dim},   {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size},
            {"tie_head", c.tie_head}, {"answer_offset", c.answer_offset}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
    LmConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.tie_head = j.value("tie_head", c.tie_head);
    c.answer_offset = j.value("answer_offset", c.answer_offset);
    return c;
}

long base_param_count(const LmConfig& c) {
    const long D = c.model_dim, F = c.ffn_dim, V = c.vocab_size, S = c.max_seq_len;
    const long per_layer = 2 * (2 * D)            // two layer norms
                           + 4 * (D * D + D)      // q, k, v, o
                           + (D * F + F) + (F * D + D);
    return V * D + S * D + c.n_layers * per_layer + 2 * D + (c.tie_head ? V : D * V + V);
}

void LoraConfig::validate() const {
    if (r < 1) throw ConfigError("lora config: rank must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("lora config: alpha must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora config: dropout must lie in [0, 1)");
    if (targets.empty()) throw ConfigError("lora config: no adapter targets");
    for (const auto& t : targets) {
        if (std::find(known_targets().begin(), known_targets().end(), t) == known_targets().end()) {
            throw ConfigError("lora config: unknown target '" + t + "' (expected q|k|v|o|ffn_in|ffn_out)");
        }
    }
}

nlohmann::json to_json(const LoraConfig& c) {
    return {{"r", c.r}, {"alpha", c.alpha}, {"targets", c.targets}, {"dropout", c.dropout}};
}

LoraConfig lora_config_from_json(const nlohmann::json& j) {
    LoraConfig c;
    c.r = j.value("r", c.r);
    c.alpha = j.value("alpha", c.alpha);
    c.targets = j.value("targets", c.targets);
    c.dropout = j.value("dropout", c.dropout);
    return c;
}

std::pair<int, int> target_shape(const LmConfig& c, std::string_view target) {
    if (target == "q" || target == "k" || target == "v" || target == "o") return {c.model_dim, c.model_dim};
    if (target == "ffn_in") return {c.model_dim, c.ffn_dim};
    if (target == "ffn_out") return {c.ffn_dim, c.model_dim};
    throw ConfigError("unknown adapter target '" + std::string(target) + "'");
}

// --- adapters ----------------------------------------------------------------

const LoraPair* AdapterState::find(int layer, std::string_view target) const {
    for (const auto& p : pairs) {
        if (p.layer == layer && p.target == target) return &p;
    }
    return nullptr;
}

std::vector<Parameter*> AdapterState::parameters() {
    std::vector<Parameter*> out;
    for (auto& p : pairs) {
        out.push_back(&p.A);
        out.push_back(&p.B);
    }
    return out;
}

long AdapterState::element_count() const {
    long n = 0;
    for (const auto& p : pairs) n += static_cast<long>(p.A.size() + p.B.size());
    return n;
}

AdapterState make_adapter(const LmConfig& base, const LoraConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    AdapterState a;
    a.config = cfg;
    for (int l = 0; l < base.n_layers; ++l) {
        for (const auto& t : cfg.targets) {
            const auto [in, out] = target_shape(base, t);
            LoraPair p;
            p.layer = l;
            p.target = t;
            const std::string name = "lora." + std::to_string(l) + "." + t;
            p.A = Parameter(name + ".A", rng.uniform_matrix(cfg.r, in, 1.0 / std::sqrt(static_cast<double>(in))));
            p.B = Parameter(name + ".B", Matrix::Zero(out, cfg.r));
            a.pairs.push_back(std::move(p));
        }
    }
    return a;
}

void AdapterState::save(const std::filesystem::path& path) const {
    io::Container c;
    c.magic = kLoraMagic;
    c.meta["lora"] = to_json(config);
    nlohmann::json index = nlohmann::json::array();
    for (const auto& p : pairs) {
        index.push_back({{"layer", p.layer}, {"target", p.target}});
        c.add(p.A.name, p.A.value);
        c.add(p.B.name, p.B.value);
    }
    c.meta["pairs"] = index;
    io::save_container(path, c);
}

AdapterState AdapterState::load(const std::filesystem::path& path) {
    const io::Container c = io::load_container(path, kLoraMagic);
    AdapterState a;
    a.config = lora_config_from_json(c.meta.at("lora"));
    a.config.validate();
    for (const auto& e : c.meta.at("pairs")) {
        LoraPair p;
        p.layer = e.at("layer").get<int>();
        p.target = e.at("target").get<std::string>();
        const std::string name = "lora." + std::to_string(p.layer) + "." + p.target;
        p.A = Parameter(name + ".A", c.array(name + ".A"));
        p.B = Parameter(name + ".B", c.array(name + ".B"));
        if (p.A.value.rows() != a.config.r || p.B.value.cols() != a.config.r) {
            throw DataError("adapter checkpoint " + path.string() + ": pair '" + name + "' does not have rank " +
                            std::to_string(a.config.r));
        }
        a.pairs.push_back(std::move(p));
    }
    return a;
}

Matrix effective_weight(const Matrix& W, const Matrix& A, const Matrix& B, double alpha, int r) {
    if (r < 1) throw DomainError("effective_weight: rank must be >= 1");
    if (A.rows() != r || B.cols() != r || B.rows() != W.rows() || A.cols() != W.cols()) {
        throw DomainError("effective_weight: shapes W[" + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                          "], A[" + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) + "], B[" +
                          std::to_string(B.rows()) + "x" + std::to_string(B.cols()) + "] do not conform");
    }
    return W + (alpha / static_cast<double>(r)) * (B * A);
}

double trainable_ratio(const AdapterState& adapter, const LmConfig& base) {
    return static_cast<double>(adapter.element_count()) / static_cast<double>(base_param_count(base));
}

// --- model -------------------------------------------------------------------

TransformerLm::TransformerLm(const LmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const int D = cfg.model_dim;
    // Rows double as output directions when tied; the scale leaves room for
    // confident logits behind the frozen final layer norm.
    tok_emb_ = Parameter("tok_emb", rng.normal_matrix(cfg.vocab_size, D, 2.0 / std::sqrt(static_cast<double>(D))));
    pos_emb_ = Parameter("pos_emb", rng.normal_matrix(cfg.max_seq_len, D, 0.1));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Block b;
        b.ln1 = nn::LayerNorm(p + "ln1", D);
        b.ln2 = nn::LayerNorm(p + "ln2", D);
        b.q = nn::Linear(p + "q", D, D, true, rng);
        b.k = nn::Linear(p + "k", D, D, true, rng);
        b.v = nn::Linear(p + "v", D, D, true, rng);
        b.o = nn::Linear(p + "o", D, D, true, rng);
        b.ffn_in = nn::Linear(p + "ffn_in", D, cfg.ffn_dim, true, rng);
        b.ffn_out = nn::Linear(p + "ffn_out", cfg.ffn_dim, D, true, rng);
        blocks_.push_back(std::move(b));
    }
    ln_f_ = nn::LayerNorm("ln_f", D);
    head_ = nn::Linear("head", D, cfg.vocab_size, true, rng);
    // The head stays frozen under adapters and ln_f bounds the residual norm,
    // so a default-scale head caps how confident any prediction can get.
    head_.weight.value *= 3.0;
}

Var TransformerLm::project(Graph& g, Var x, const nn::Linear& lin, int layer, std::string_view target,
                           const AdapterState* adapter, Rng* dropout_rng) const {
    Var y = lin(g, x);
    if (adapter == nullptr) return y;
    const LoraPair* p = adapter->find(layer, target);
    if (p == nullptr) return y;
    Var xin = x;
    if (dropout_rng != nullptr && adapter->config.dropout > 0.0) xin = g.dropout(x, adapter->config.dropout, *dropout_rng);
    Var low = g.matmul_nt(xin, g.param(p->A));
    Var delta = g.matmul_nt(low, g.param(p->B));
    return g.add(y, g.scale(delta, adapter->config.scale()));
}

std::vector<int> TransformerLm::positions(int length, int answer_start) const {
    std::vector<int> pos(static_cast<std::size_t>(length));
    std::iota(pos.begin(), pos.end(), 0);
    if (cfg_.answer_offset > 0 && answer_start >= 0) {
        if (answer_start > cfg_.answer_offset) {
            throw DomainError("lm forward: prompt of " + std::to_string(answer_start) +
                              " ids exceeds the answer offset " + std::to_string(cfg_.answer_offset));
        }
        for (int t = answer_start; t < length; ++t) pos[static_cast<std::size_t>(t)] = cfg_.answer_offset + t - answer_start;
    }
    for (int p : pos) {
        if (p >= cfg_.max_seq_len) {
            throw DomainError("lm forward: input of " + std::to_string(length) + " tokens exceeds max_seq_len " +
                              std::to_string(cfg_.max_seq_len));
        }
    }
    return pos;
}

Var TransformerLm::forward(Graph& g, std::span<const int> ids, const AdapterState* adapter, Rng* dropout_rng,
                           int answer_start) const {
    const auto T = static_cast<int>(ids.size());
    if (T < 1) throw DomainError("lm forward: empty input");
    for (int id : ids) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw DomainError("lm forward: token id " + std::to_string(id) + " outside the vocabulary");
        }
    }
    const std::vector<int> pos = positions(T, answer_start);
    Var x = g.add(g.gather_rows(g.param(tok_emb_), ids), g.gather_rows(g.param(pos_emb_), pos));

    const int H = cfg_.n_heads;
    const int dh = cfg_.model_dim / H;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const Block& b = blocks_[static_cast<std::size_t>(l)];
        Var h = b.ln1(g, x);
        Var q = project(g, h, b.q, l, "q", adapter, dropout_rng);
        Var k = project(g, h, b.k, l, "k", adapter, dropout_rng);
        Var v = project(g, h, b.v, l, "v", adapter, dropout_rng);
        std::vector<Var> heads;
        heads.reserve(static_cast<std::size_t>(H));
        for (int hd = 0; hd < H; ++hd) {
            Var qh = g.slice_cols(q, hd * dh, dh);
            Var kh = g.slice_cols(k, hd * dh, dh);
            Var vh = g.slice_cols(v, hd * dh, dh);
            Var att = g.causal_softmax_rows(g.scale(g.matmul_nt(qh, kh), att_scale));
            heads.push_back(g.matmul(att, vh));
        }
        Var cat = H == 1 ? heads.front() : g.concat_cols(heads);
        x = g.add(x, project(g, cat, b.o, l, "o", adapter, dropout_rng));
        Var h2 = b.ln2(g, x);
        Var ff = g.gelu(project(g, h2, b.ffn_in, l, "ffn_in", adapter, dropout_rng));
        x = g.add(x, project(g, ff, b.ffn_out, l, "ffn_out", adapter, dropout_rng));
    }
    Var h = ln_f_(g, x);
    if (!cfg_.tie_head) return head_(g, h);
    return g.add_row(g.matmul_nt(h, g.param(tok_emb_)), g.param(head_.bias));
}

Matrix TransformerLm::logits(std::span<const int> ids, const AdapterState* adapter, int answer_start) const {
    Graph g(false);
    return g.value(forward(g, ids, adapter, nullptr, answer_start));
}

std::vector<Parameter*> TransformerLm::parameters() {
    std::vector<Parameter*> out{&tok_emb_, &pos_emb_};
    for (auto& b : blocks_) {
        b.ln1.collect(out);
        b.q.collect(out);
        b.k.collect(out);
        b.v.collect(out);
        b.o.collect(out);
        b.ln2.collect(out);
        b.ffn_in.collect(out);
        b.ffn_out.collect(out);
    }
    ln_f_.collect(out);
    if (cfg_.tie_head) {
        out.push_back(&head_.bias);
    } else {
        head_.collect(out);
    }
    return out;
}

std::vector<const Parameter*> TransformerLm::parameters() const {
    std::vector<const Parameter*> out;
    for (Parameter* p : const_cast<TransformerLm*>(this)->parameters()) out.push_back(p);
    return out;
}

void TransformerLm::set_frozen(bool frozen) {
    for (Parameter* p : parameters()) p->frozen = frozen;
}

long TransformerLm::param_count() const {
    long n = 0;
    for (const Parameter* p : parameters()) n += static_cast<long>(p->size());
    return n;
}

const Parameter& TransformerLm::projection(int layer, std::string_view target) const {
    if (layer < 0 || layer >= cfg_.n_layers) throw DomainError("projection: layer out of range");
    const Block& b = blocks_[static_cast<std::size_t>(layer)];
    if (target == "q") return b.q.weight;
    if (target == "k") return b.k.weight;
    if (target == "v") return b.v.weight;
    if (target == "o") return b.o.weight;
    if (target == "ffn_in") return b.ffn_in.weight;
    if (target == "ffn_out") return b.ffn_out.weight;
    throw DomainError("projection: unknown target '" + std::string(target) + "'");
}

void TransformerLm::save(const std::filesystem::path& path, const Vocabulary& vocab) const {
    if (vocab.size() != cfg_.vocab_size) throw DomainError("base checkpoint: vocabulary size does not match model");
    io::Container c;
    c.magic = kBaseMagic;
    c.meta["config"] = to_json(cfg_);
    c.meta["vocab"] = vocab.to_json();
    for (const Parameter* p : parameters()) c.add(p->name, p->value);
    io::save_container(path, c);
}

TransformerLm::Loaded TransformerLm::load(const std::filesystem::path& path) {
    const io::Container c = io::load_container(path, kBaseMagic);
    Loaded out;
    const LmConfig cfg = lm_config_from_json(c.meta.at("config"));
    out.vocab = Vocabulary::from_json(c.meta.at("vocab"));
    if (out.vocab.size() != cfg.vocab_size) {
        throw DataError("base checkpoint " + path.string() + ": vocabulary does not match config");
    }
    out.model = TransformerLm(cfg, 0);
    for (Parameter* p : out.model.parameters()) {
        const Matrix& v = c.array(p->name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
            throw DataError("base checkpoint array '" + p->name + "' has the wrong shape in " + path.string());
        }
        p->value = v;
    }
    return out;
}

// --- training ----------------------------------------------------------------

std::vector<int> encode_prompt(const Vocabulary& vocab, const instr::InstructionSample& s) {
    std::vector<int> ids{vocab.bos()};
    const std::vector<int> body = vocab.encode_text(instr::render_full_prompt(s, false));
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

EncodedSample encode_sample(const Vocabulary& vocab, const instr::InstructionSample& s) {
    EncodedSample e;
    e.ids = encode_prompt(vocab, s);
    e.answer_start = static_cast<int>(e.ids.size());
    const instr::ParsedAnswer parsed = instr::parse_motion_answer(s.output, vocab.motion_count(), true);
    const std::vector<int> ans = vocab.encode_answer(parsed.tokens);
    e.ids.insert(e.ids.end(), ans.begin(), ans.end());
    e.ids.push_back(vocab.eos());
    return e;
}

int LmSchedule::accumulation_steps() const { return (batch_size + micro_batch - 1) / micro_batch; }

void LmSchedule::validate() const {
    if (steps < 0) throw ConfigError("lm schedule: steps must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("lm schedule: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("lm schedule: weight_decay must be >= 0");
    if (batch_size < 1 || micro_batch < 1) throw ConfigError("lm schedule: batch sizes must be positive");
    if (batch_size % micro_batch != 0) {
        throw ConfigError("lm schedule: batch_size " + std::to_string(batch_size) +
                          " is not a multiple of micro_batch " + std::to_string(micro_batch));
    }
}

nlohmann::json to_json(const LmSchedule& s) {
    return {{"steps", s.steps},
            {"lr", s.lr},
            {"weight_decay", s.weight_decay},
            {"batch_size", s.batch_size},
            {"micro_batch", s.micro_batch},
            {"grad_clip", s.grad_clip},
            {"seed", s.seed},
            {"memory_budget_mb", s.memory_budget_mb}};
}

LmSchedule lm_schedule_from_json(const nlohmann::json& j) {
    LmSchedule s;
    s.steps = j.value("steps", s.steps);
    s.lr = j.value("lr", s.lr);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.micro_batch = j.value("micro_batch", s.micro_batch);
    s.grad_clip = j.value("grad_clip", s.grad_clip);
    s.seed = j.value("seed", s.seed);
    s.memory_budget_mb = j.value("memory_budget_mb", s.memory_budget_mb);
    return s;
}

double estimated_training_memory_mb(const LmConfig& c, const LmSchedule& s, long trainable) {
    const double base = static_cast<double>(base_param_count(c));
    // Values plus gradients for everything, Adam moments for trainables.
    const double weights = 2.0 * base + 3.0 * static_cast<double>(trainable);
    const double T = c.max_seq_len, D = c.model_dim, F = c.ffn_dim, H = c.n_heads, V = c.vocab_size;
    // Every graph node keeps its value and gradient; per layer roughly 16
    // [T x D] tensors, 3 [T x F] and 4 [T x T] per head.
    const double per_sample = 2.0 * (c.n_layers * (16.0 * T * D + 3.0 * T * F + 4.0 * H * T * T) + 3.0 * T * V) +
                              2.0 * base;  // parameter leaves are copied into the graph
    return 8.0 * (weights + s.micro_batch * per_sample) / (1024.0 * 1024.0);
}

namespace {

void check_budget(const LmConfig& cfg, const LmSchedule& s, long trainable) {
    const double mb = estimated_training_memory_mb(cfg, s, trainable);
    if (mb > s.memory_budget_mb) {
        throw ConfigError("lm training: estimated " + std::to_string(static_cast<long>(mb)) +
                          " MiB exceeds the memory budget of " + std::to_string(static_cast<long>(s.memory_budget_mb)) +
                          " MiB; reduce micro_batch, model size or max_seq_len");
    }
}

void check_fits(const LmConfig& cfg, const std::vector<EncodedSample>& data) {
    for (const auto& e : data) {
        const int inputs = static_cast<int>(e.ids.size()) - 1;
        if (cfg.answer_offset > 0 && e.answer_start > 0) {
            if (e.answer_start > cfg.answer_offset || cfg.answer_offset + inputs - e.answer_start > cfg.max_seq_len) {
                throw ConfigError("lm training: a sample with a " + std::to_string(e.answer_start) + "-id prompt and " +
                                  std::to_string(e.answer_count()) + " answer ids does not fit answer_offset " +
                                  std::to_string(cfg.answer_offset) + " / max_seq_len " +
                                  std::to_string(cfg.max_seq_len));
            }
            continue;
        }
        if (inputs > cfg.max_seq_len) {
            throw ConfigError("lm training: a sample of " + std::to_string(e.ids.size()) +
                              " tokens does not fit max_seq_len " + std::to_string(cfg.max_seq_len));
        }
    }
}

// Seeded epoch stream: each epoch is a fresh permutation of the corpus.
class BatchStream {
public:
    BatchStream(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) { refill(); }

    std::vector<std::size_t> next(int count) {
        std::vector<std::size_t> out;
        out.reserve(static_cast<std::size_t>(count));
        while (static_cast<int>(out.size()) < count) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
    }
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// Targets and weights for next-token prediction on ids[0..n-2].
void targets_for(const EncodedSample& e, double weight, bool answer_only, std::vector<int>& targets,
                 std::vector<double>& weights) {
    const std::size_t n = e.ids.size() - 1;
    targets.assign(e.ids.begin() + 1, e.ids.end());
    weights.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        if (!answer_only || static_cast<int>(t) + 1 >= e.answer_start) weights[t] = weight;
    }
}

int target_count(const EncodedSample& e, bool answer_only) {
    return answer_only ? e.answer_count() : static_cast<int>(e.ids.size()) - 1;
}

double batch_step(const TransformerLm& model, const AdapterState* adapter,
                  const std::vector<const EncodedSample*>& batch, int micro_batch, bool answer_only, nn::AdamW& opt,
                  Rng& rng) {
    if (batch.empty()) throw DomainError("train_step: empty batch");
    long total = 0;
    for (const auto* e : batch) total += target_count(*e, answer_only);
    if (total == 0) throw DomainError("train_step: batch has no supervised targets");
    const double w = 1.0 / static_cast<double>(total);
    double loss = 0.0;
    std::vector<int> targets;
    std::vector<double> weights;
    for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(micro_batch)) {
        const std::size_t end = std::min(batch.size(), start + static_cast<std::size_t>(micro_batch));
        Graph g(true);
        std::vector<Var> parts;
        for (std::size_t i = start; i < end; ++i) {
            const EncodedSample& e = *batch[i];
            const std::span<const int> input(e.ids.data(), e.ids.size() - 1);
            Var logits = model.forward(g, input, adapter, adapter != nullptr ? &rng : nullptr,
                                       answer_only ? e.answer_start : -1);
            targets_for(e, w, answer_only, targets, weights);
            parts.push_back(g.cross_entropy_rows(logits, targets, weights));
        }
        Var l = parts.front();
        for (std::size_t i = 1; i < parts.size(); ++i) l = g.add(l, parts[i]);
        const double v = g.scalar(l);
        if (!std::isfinite(v)) throw TrainingError("lm training: non-finite loss", static_cast<long>(opt.steps_taken()) - 1);
        loss += v;
        g.backward(l);
    }
    opt.step(1.0);
    return loss;
}

LmTrainLog run_schedule(const TransformerLm& model, AdapterState* adapter, std::vector<Parameter*> trainable,
                        const std::vector<EncodedSample>& data, const LmSchedule& s, bool answer_only) {
    nn::AdamWConfig oc;
    oc.lr = s.lr;
    oc.weight_decay = s.weight_decay;
    oc.grad_clip = s.grad_clip;
    nn::AdamW opt(std::move(trainable), oc);
    Rng drop_rng(s.seed ^ 0x9e3779b97f4a7c15ULL);
    BatchStream stream(data.size(), s.seed);

    auto eval_loss = [&]() {
        double sum = 0.0;
        long n = 0;
        for (const auto& e : data) {
            Graph g(false);
            const std::span<const int> input(e.ids.data(), e.ids.size() - 1);
            Var logits = model.forward(g, input, adapter, nullptr, answer_only ? e.answer_start : -1);
            std::vector<int> targets;
            std::vector<double> weights;
            targets_for(e, 1.0, answer_only, targets, weights);
            sum += g.scalar(g.cross_entropy_rows(logits, targets, weights));
            n += target_count(e, answer_only);
        }
        return sum / static_cast<double>(n);
    };

    LmTrainLog log;
    log.initial_loss = eval_loss();
    for (int step = 0; step < s.steps; ++step) {
        const std::vector<std::size_t> idx = stream.next(s.batch_size);
        std::vector<const EncodedSample*> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) batch.push_back(&data[i]);
        double loss = 0.0;
        try {
            loss = batch_step(model, adapter, batch, s.micro_batch, answer_only, opt, drop_rng);
        } catch (const TrainingError&) {
            throw TrainingError("lm training: non-finite loss at step " + std::to_string(step), step - 1);
        }
        if (s.log_every > 0 && (step % s.log_every == 0 || step + 1 == s.steps)) log.steps.push_back({step, loss});
    }
    log.final_loss = eval_loss();
    if (!std::isfinite(log.final_loss)) throw TrainingError("lm training: non-finite final loss", s.steps - 1);
    return log;
}

std::vector<EncodedSample> encode_all(const Vocabulary& vocab, const std::vector<instr::InstructionSample>& corpus) {
    std::vector<EncodedSample> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back(encode_sample(vocab, s));
    return out;
}

}  // namespace

double answer_loss(const TransformerLm& model, const AdapterState* adapter, const std::vector<EncodedSample>& data) {
    if (data.empty()) throw DomainError("answer_loss: no samples");
    double sum = 0.0;
    long n = 0;
    std::vector<int> targets;
    std::vector<double> weights;
    for (const auto& e : data) {
        Graph g(false);
        const std::span<const int> input(e.ids.data(), e.ids.size() - 1);
        Var logits = model.forward(g, input, adapter, nullptr, e.answer_start);
        targets_for(e, 1.0, true, targets, weights);
        sum += g.scalar(g.cross_entropy_rows(logits, targets, weights));
        n += e.answer_count();
    }
    return sum / static_cast<double>(n);
}

double train_step(const TransformerLm& model, AdapterState* adapter, const std::vector<const EncodedSample*>& batch,
                  int micro_batch, nn::AdamW& opt, Rng& rng) {
    if (micro_batch < 1) throw DomainError("train_step: micro_batch must be positive");
    return batch_step(model, adapter, batch, micro_batch, true, opt, rng);
}

LmTrainLog pretrain_base(TransformerLm& model, const Vocabulary& vocab,
                         const std::vector<instr::InstructionSample>& corpus, const LmSchedule& s) {
    if (corpus.empty()) throw DomainError("pretrain_base: empty corpus");
    s.validate();
    std::vector<EncodedSample> data;
    for (const auto& smp : corpus) {
        EncodedSample e;
        e.ids = encode_prompt(vocab, smp);
        e.answer_start = 0;
        data.push_back(std::move(e));
    }
    check_fits(model.config(), data);
    check_budget(model.config(), s, model.param_count());
    model.set_frozen(false);
    LmTrainLog log = run_schedule(model, nullptr, model.parameters(), data, s, false);
    model.set_frozen(true);
    return log;
}

LoraTrainResult train_lora(TransformerLm& model, const Vocabulary& vocab,
                           const std::vector<instr::InstructionSample>& corpus, const LoraConfig& lora,
                           const LmSchedule& s) {
    if (corpus.empty()) throw DomainError("train_lora: empty corpus");
    s.validate();
    lora.validate();
    if (vocab.size() != model.config().vocab_size) throw ConfigError("train_lora: vocabulary does not match the base");
    const std::vector<EncodedSample> data = encode_all(vocab, corpus);
    check_fits(model.config(), data);
    LoraTrainResult out;
    out.adapter = make_adapter(model.config(), lora, s.seed ^ 0x5bd1e995ULL);
    check_budget(model.config(), s, out.adapter.element_count());
    model.set_frozen(true);
    out.log = run_schedule(model, &out.adapter, out.adapter.parameters(), data, s, true);
    return out;
}

int answer_budget(const Vocabulary& vocab, const std::vector<instr::InstructionSample>& corpus, double factor) {
    if (corpus.empty()) throw DomainError("answer_budget: empty corpus");
    int longest = 0;
    for (const auto& s : corpus) longest = std::max(longest, encode_sample(vocab, s).answer_count() - 1);
    return static_cast<int>(std::ceil(factor * longest)) + 1;
}

LmConfig fit_config(LmConfig base, const Vocabulary& vocab, const std::vector<instr::InstructionSample>& corpus,
                    double budget_factor) {
    base.vocab_size = vocab.size();
    int prompt = 0;
    for (const auto& s : corpus) prompt = std::max(prompt, static_cast<int>(encode_prompt(vocab, s).size()));
    base.answer_offset = prompt;
    base.max_seq_len = std::max(base.max_seq_len, prompt + answer_budget(vocab, corpus, budget_factor));
    return base;
}

}  // namespace mgpt::lm
