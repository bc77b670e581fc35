// SPDX-License-Identifier: Apache-2.0

#include "mgpt/evaluation.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"
#include "mgpt/lm.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace mgpt::eval {

using ag::Graph;
using ag::Parameter;
using ag::Var;

namespace {

constexpr std::string_view kExtractorMagic = "BENC1";
constexpr double kNegEigTol = -1e-8;
constexpr double kJitter = 1e-6;

Matrix covariance(const Matrix& x) {
    const RowVector mu = x.colwise().mean();
    const Matrix c = x.rowwise() - mu;
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

// Symmetric PSD square root; false when an eigenvalue is below tolerance.
bool sqrt_psd(const Matrix& m, Matrix& out) {
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success) return false;
    Vector ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < kNegEigTol * std::max(1.0, ev.cwiseAbs().maxCoeff())) return false;
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return true;
}

bool trace_sqrt_product(const Matrix& a, const Matrix& b, double& tr) {
    Matrix ra;
    if (!sqrt_psd(a, ra)) return false;
    const Matrix m = ra * b * ra;
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) return false;
    const Vector ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < kNegEigTol * std::max(1.0, ev.cwiseAbs().maxCoeff())) return false;
    tr = ev.cwiseMax(0.0).cwiseSqrt().sum();
    return true;
}

double row_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).norm();
}

Matrix rows_at(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= m.rows()) {
            throw DomainError("position " + std::to_string(idx[i]) + " outside [0, " + std::to_string(m.rows()) + ")");
        }
        out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    }
    return out;
}

}  // namespace

// --- metrics -------------------------------------------------------------------

FidResult fid(const Matrix& real, const Matrix& gen) {
    if (real.rows() < 2 || gen.rows() < 2) {
        throw DomainError("fid: need at least 2 samples per set (got " + std::to_string(real.rows()) + " and " +
                          std::to_string(gen.rows()) + ")");
    }
    if (real.cols() != gen.cols()) throw DomainError("fid: feature widths differ");
    const RowVector dmu = real.colwise().mean() - gen.colwise().mean();
    Matrix sr = covariance(real);
    Matrix sg = covariance(gen);
    FidResult r;
    double tr = 0.0;
    if (!trace_sqrt_product(sr, sg, tr)) {
        r.jittered = true;
        sr.diagonal().array() += kJitter;
        sg.diagonal().array() += kJitter;
        if (!trace_sqrt_product(sr, sg, tr)) throw DomainError("fid: covariance square root failed after jitter");
    }
    r.value = dmu.squaredNorm() + sr.trace() + sg.trace() - 2.0 * tr;
    return r;
}

double mm_dist(const Matrix& text_feats, const Matrix& motion_feats) {
    if (text_feats.rows() != motion_feats.rows() || text_feats.cols() != motion_feats.cols()) {
        throw DomainError("mm_dist: paired feature sets differ in shape");
    }
    if (text_feats.rows() == 0) throw DomainError("mm_dist: no pairs");
    double s = 0.0;
    for (Eigen::Index i = 0; i < text_feats.rows(); ++i) s += row_dist(text_feats, i, motion_feats, i);
    return s / static_cast<double>(text_feats.rows());
}

std::vector<double> r_precision(const Matrix& motion_feats, const Matrix& text_feats, int pool_size, int k,
                                std::uint64_t seed) {
    if (k < 1) throw DomainError("r_precision: k must be >= 1");
    if (pool_size < k + 1) {
        throw DomainError("r_precision: pool size " + std::to_string(pool_size) + " must exceed k = " +
                          std::to_string(k));
    }
    if (motion_feats.rows() != text_feats.rows()) throw DomainError("r_precision: unpaired feature sets");
    const auto n = static_cast<int>(motion_feats.rows());
    if (pool_size > n) {
        throw DomainError("r_precision: pool size " + std::to_string(pool_size) + " exceeds " + std::to_string(n) +
                          " samples");
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<long> hits(static_cast<std::size_t>(k), 0);
    long trials = 0;
    for (int start = 0; start + pool_size <= n; start += pool_size) {
        for (int a = 0; a < pool_size; ++a) {
            const int i = order[static_cast<std::size_t>(start + a)];
            const double d_true = row_dist(motion_feats, i, text_feats, i);
            int rank = 0;  // texts strictly closer than the true one
            for (int b = 0; b < pool_size; ++b) {
                if (b == a) continue;
                const int j = order[static_cast<std::size_t>(start + b)];
                if (row_dist(motion_feats, i, text_feats, j) < d_true) ++rank;
            }
            for (int t = rank; t < k; ++t) ++hits[static_cast<std::size_t>(t)];
            ++trials;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) out[static_cast<std::size_t>(t)] = static_cast<double>(hits[static_cast<std::size_t>(t)]) / trials;
    return out;
}

int default_diversity_subset(Eigen::Index n) { return static_cast<int>(std::min<Eigen::Index>(300, n / 2)); }

double diversity(const Matrix& feats, int subset, std::uint64_t seed) {
    if (subset < 1) throw DomainError("diversity: subset size must be >= 1");
    if (2L * subset > feats.rows()) {
        throw DomainError("diversity: 2 x " + std::to_string(subset) + " exceeds " + std::to_string(feats.rows()) +
                          " samples");
    }
    std::vector<int> order(static_cast<std::size_t>(feats.rows()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    double s = 0.0;
    for (int i = 0; i < subset; ++i) {
        s += row_dist(feats, order[static_cast<std::size_t>(i)], feats, order[static_cast<std::size_t>(subset + i)]);
    }
    return s / subset;
}

double recon_loss(const data::MotionSequence& gen, const Matrix& cond_frames, const std::vector<int>& positions) {
    if (positions.empty()) throw DomainError("recon_loss: no positions");
    if (static_cast<Eigen::Index>(positions.size()) != cond_frames.rows()) {
        throw DomainError("recon_loss: positions and condition frames differ in count");
    }
    const Matrix g = rows_at(gen.frames, positions);
    if (g.cols() != cond_frames.cols()) throw DomainError("recon_loss: feature widths differ");
    return (g - cond_frames).rowwise().norm().sum() / static_cast<double>(positions.size());
}

double vel_loss(const data::MotionSequence& gen, const data::MotionSequence& gt, const std::vector<int>& positions,
                Align align, VelMode mode) {
    const Eigen::Index Tg = gen.length(), Tt = gt.length();
    if (Tg < 2 || Tt < 2) throw DomainError("vel_loss: sequences need at least 2 frames");
    if (positions.empty()) throw DomainError("vel_loss: no positions");
    std::set<int> window(positions.begin(), positions.end());
    for (int p : window) {
        if (p < 0 || p >= Tt) throw DomainError("vel_loss: position " + std::to_string(p) + " outside ground truth");
    }
    double s = 0.0;
    int steps = 0;
    for (Eigen::Index t = 0; t + 1 < Tt; ++t) {
        const bool a = window.count(static_cast<int>(t)) > 0;
        const bool b = window.count(static_cast<int>(t + 1)) > 0;
        const bool boundary = a != b;
        if (!(boundary || (mode == VelMode::Window && a && b))) continue;
        const Eigen::Index tg = align == Align::Leading ? t : t - Tt + Tg;
        if (tg < 0 || tg + 1 >= Tg) continue;
        const RowVector vg = gen.frames.row(tg + 1) - gen.frames.row(tg);
        const RowVector vt = gt.frames.row(t + 1) - gt.frames.row(t);
        s += (vg - vt).norm();
        ++steps;
    }
    if (steps == 0) throw DomainError("vel_loss: no velocity step next to the window fits both sequences");
    return s / steps;
}

double key_dist(const data::MotionSequence& gen, const Matrix& key_frames) {
    if (gen.length() == 0 || key_frames.rows() == 0) throw DomainError("key_dist: empty input");
    if (gen.dim() != key_frames.cols()) throw DomainError("key_dist: feature widths differ");
    double s = 0.0;
    for (Eigen::Index k = 0; k < key_frames.rows(); ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < gen.length(); ++t) {
            double d = 0.0;
            for (Eigen::Index j = 0; j < gen.dim(); ++j) {
                const double e = gen.frames(t, j) - key_frames(k, j);
                d += e * e;
            }
            best = std::min(best, d);
        }
        s += std::sqrt(best);
    }
    return s / static_cast<double>(key_frames.rows());
}

// --- feature extractor ---------------------------------------------------------

FeatureExtractor::FeatureExtractor(int feature_dim, std::vector<std::string> words, const ExtractorConfig& cfg)
    : cfg_(cfg), feature_dim_(feature_dim), words_(std::move(words)) {
    if (feature_dim < 1 || cfg.width < 1 || cfg.hidden < 1) throw ConfigError("extractor: widths must be positive");
    for (std::size_t i = 0; i < words_.size(); ++i) word_index_.emplace(words_[i], static_cast<int>(i));
    Rng rng(cfg.seed);
    m_in_ = nn::Linear("motion.in", 2 * feature_dim, cfg.hidden, true, rng);
    m_mid_ = nn::Linear("motion.mid", cfg.hidden, cfg.hidden, true, rng);
    m_out_ = nn::Linear("motion.out", cfg.hidden, cfg.width, true, rng);
    word_emb_ = Parameter("text.emb", rng.normal_matrix(std::max<Eigen::Index>(1, words_.size()), cfg.hidden, 1.0));
    t_out_ = nn::Linear("text.out", cfg.hidden, cfg.width, true, rng);
}

std::vector<int> FeatureExtractor::word_ids(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : lm::split_words(text)) {
        const auto it = word_index_.find(w);
        if (it != word_index_.end()) ids.push_back(it->second);
    }
    return ids;
}

Var FeatureExtractor::motion_graph(Graph& g, const Matrix& frames) const {
    if (frames.rows() < 2) throw DomainError("extractor: motions need at least 2 frames");
    if (frames.cols() != feature_dim_) {
        throw DomainError("extractor: expected " + std::to_string(feature_dim_) + " features, got " +
                          std::to_string(frames.cols()));
    }
    const Eigen::Index T = frames.rows() - 1;
    Matrix in(T, 2 * frames.cols());
    in.leftCols(frames.cols()) = frames.topRows(T);
    in.rightCols(frames.cols()) = frames.bottomRows(T) - frames.topRows(T);
    Var h = g.relu(m_in_(g, g.constant(std::move(in))));
    h = g.relu(m_mid_(g, h));
    return m_out_(g, g.mean_rows(h));
}

Var FeatureExtractor::text_graph(Graph& g, const std::string& text) const {
    const std::vector<int> ids = word_ids(text);
    Var pooled = ids.empty() ? g.constant(Matrix::Zero(1, cfg_.hidden)) : g.mean_rows(g.gather_rows(g.param(word_emb_), ids));
    return t_out_(g, pooled);
}

RowVector FeatureExtractor::embed_motion(const data::MotionSequence& motion) const {
    Graph g(false);
    return g.value(motion_graph(g, motion.frames)).row(0);
}

RowVector FeatureExtractor::embed_text(const std::string& text) const {
    Graph g(false);
    return g.value(text_graph(g, text)).row(0);
}

Matrix FeatureExtractor::embed_motions(const std::vector<data::MotionSequence>& motions) const {
    Matrix out(static_cast<Eigen::Index>(motions.size()), cfg_.width);
    for (std::size_t i = 0; i < motions.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_motion(motions[i]);
    return out;
}

Matrix FeatureExtractor::embed_texts(const std::vector<std::string>& texts) const {
    Matrix out(static_cast<Eigen::Index>(texts.size()), cfg_.width);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embed_text(texts[i]);
    return out;
}

std::vector<Parameter*> FeatureExtractor::parameters() {
    std::vector<Parameter*> out;
    m_in_.collect(out);
    m_mid_.collect(out);
    m_out_.collect(out);
    out.push_back(&word_emb_);
    t_out_.collect(out);
    return out;
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
    io::Container c;
    c.magic = kExtractorMagic;
    c.meta["config"] = {{"width", cfg_.width}, {"hidden", cfg_.hidden}, {"steps", cfg_.steps},
                        {"lr", cfg_.lr},       {"margin", cfg_.margin}, {"seed", cfg_.seed}};
    c.meta["feature_dim"] = feature_dim_;
    c.meta["words"] = words_;
    c.meta["provenance"] = provenance;
    for (Parameter* p : const_cast<FeatureExtractor*>(this)->parameters()) c.add(p->name, p->value);
    io::save_container(path, c);
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
    const io::Container c = io::load_container(path, kExtractorMagic);
    ExtractorConfig cfg;
    const auto& j = c.meta.at("config");
    cfg.width = j.at("width").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.steps = j.at("steps").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.margin = j.at("margin").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    FeatureExtractor fx(c.meta.at("feature_dim").get<int>(), c.meta.at("words").get<std::vector<std::string>>(), cfg);
    fx.provenance = c.meta.value("provenance", std::string());
    for (Parameter* p : fx.parameters()) {
        const Matrix& v = c.array(p->name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
            throw DataError("extractor checkpoint array '" + p->name + "' has the wrong shape in " + path.string());
        }
        p->value = v;
    }
    return fx;
}

double matched_rate(const FeatureExtractor& fx, const std::vector<data::MotionSequence>& motions,
                    const std::vector<std::string>& texts) {
    if (motions.size() != texts.size()) throw DomainError("matched_rate: unpaired inputs");
    const Matrix m = fx.embed_motions(motions);
    const Matrix t = fx.embed_texts(texts);
    long good = 0, total = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double d = row_dist(m, i, t, i);
        for (Eigen::Index j = 0; j < t.rows(); ++j) {
            if (texts[static_cast<std::size_t>(i)] == texts[static_cast<std::size_t>(j)]) continue;
            ++total;
            if (d < row_dist(m, i, t, j)) ++good;
        }
    }
    if (total == 0) throw DomainError("matched_rate: no mismatched pairs");
    return static_cast<double>(good) / static_cast<double>(total);
}

namespace {

struct Pairs {
    std::vector<data::MotionSequence> motions;
    std::vector<std::string> texts;
};

Pairs pairs_in(const data::Corpus& corpus, data::Split split) {
    Pairs p;
    for (std::size_t i = 0; i < corpus.motions.size(); ++i) {
        if (corpus.split_of[i] != split) continue;
        const data::MotionSequence m = data::normalize(corpus.motions[i], corpus.stats);
        for (const auto& a : corpus.annotations_for(m.source_id)) {
            p.motions.push_back(m);
            p.texts.push_back(a.text);
        }
    }
    return p;
}

}  // namespace

ExtractorTrainResult train_bi_encoder(const data::Corpus& corpus, const ExtractorConfig& cfg) {
    if (corpus.stats.empty()) throw DataError("train_bi_encoder: corpus has no train statistics");
    const Pairs train = pairs_in(corpus, data::Split::Train);
    const std::set<std::string> distinct(train.texts.begin(), train.texts.end());
    if (distinct.size() < 2) {
        throw TrainingError("train_bi_encoder: contrastive training needs at least 2 distinct captions, found " +
                            std::to_string(distinct.size()));
    }
    std::set<std::string> vocab;
    for (const auto& t : train.texts) {
        for (auto& w : lm::split_words(t)) vocab.insert(std::move(w));
    }
    ExtractorTrainResult out;
    out.extractor = FeatureExtractor(static_cast<int>(corpus.feature_dim),
                                     std::vector<std::string>(vocab.begin(), vocab.end()), cfg);
    out.extractor.provenance = "contrastive bi-encoder; train split; " + std::to_string(train.motions.size()) +
                               " pairs; seed " + std::to_string(cfg.seed);

    const auto B = static_cast<Eigen::Index>(train.motions.size());
    Matrix mask(B, B);
    for (Eigen::Index i = 0; i < B; ++i) {
        for (Eigen::Index j = 0; j < B; ++j) {
            mask(i, j) = train.texts[static_cast<std::size_t>(i)] != train.texts[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
        }
    }
    const double neg_count = mask.sum();
    nn::AdamWConfig oc;
    oc.lr = cfg.lr;
    nn::AdamW opt(out.extractor.parameters(), oc);
    Rng rng(cfg.seed ^ 0xb1e4c0deULL);
    for (int step = 0; step < cfg.steps; ++step) {
        Graph g(true);
        std::vector<Var> mrows, trows;
        for (Eigen::Index i = 0; i < B; ++i) {
            // Random crops keep the motion branch usable on clips of any length.
            const Matrix& f = train.motions[static_cast<std::size_t>(i)].frames;
            const auto T = static_cast<long>(f.rows());
            const long len = std::max<long>(2, rng.uniform_int(std::max<long>(2, T / 2), T));
            const long start = rng.uniform_int(0, T - len);
            mrows.push_back(out.extractor.motion_graph(g, f.middleRows(start, len)));
            trows.push_back(out.extractor.text_graph(g, train.texts[static_cast<std::size_t>(i)]));
        }
        Var d = g.sq_dist(g.concat_rows(mrows), g.concat_rows(trows));
        Var pos = g.scale(g.sum(g.mul(d, g.constant(Matrix::Identity(B, B)))), 1.0 / static_cast<double>(B));
        Var hinge = g.relu(g.add_scalar(g.scale(d, -1.0), cfg.margin));
        Var neg = g.scale(g.sum(g.mul(hinge, g.constant(mask))), 1.0 / neg_count);
        Var loss = g.add(pos, neg);
        const double v = g.scalar(loss);
        if (!std::isfinite(v)) throw TrainingError("train_bi_encoder: non-finite loss at step " + std::to_string(step), step - 1);
        out.log.losses.push_back(v);
        g.backward(loss);
        opt.step();
    }
    Pairs val = pairs_in(corpus, data::Split::Val);
    const Pairs test = pairs_in(corpus, data::Split::Test);
    val.motions.insert(val.motions.end(), test.motions.begin(), test.motions.end());
    val.texts.insert(val.texts.end(), test.texts.begin(), test.texts.end());
    const std::set<std::string> val_distinct(val.texts.begin(), val.texts.end());
    out.log.val_matched_rate = val_distinct.size() >= 2 ? matched_rate(out.extractor, val.motions, val.texts)
                                                        : matched_rate(out.extractor, train.motions, train.texts);
    return out;
}

// --- evaluation driver --------------------------------------------------------

nlohmann::json to_json(const EvalConfig& c) {
    return {{"r_precision_pool", c.r_precision_pool},
            {"diversity_subset", c.diversity_subset},
            {"seed", c.seed},
            {"vel_mode", c.vel_mode == VelMode::Boundary ? "boundary" : "window"},
            {"sampling", c.sampling}};
}

namespace {

void put(nlohmann::json& j, const char* key, const std::optional<double>& v) {
    if (v) {
        j[key] = *v;
    } else {
        j[key] = nullptr;
    }
}

std::optional<double> get(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json m = nlohmann::json::object();
    put(m, "fid", fid);
    put(m, "mm_dist", mm_dist);
    put(m, "r_precision_top1", top1);
    put(m, "r_precision_top2", top2);
    put(m, "r_precision_top3", top3);
    put(m, "diversity", diversity);
    put(m, "recon", recon);
    put(m, "vel", vel);
    put(m, "dist", dist);
    return {{"metrics", m},
            {"absent", absent},
            {"counts", {{"evaluated", evaluated}, {"excluded", excluded}}},
            {"fid_jitter", fid_jitter},
            {"config", config},
            {"versions", {{"mgpt", std::string(io::version())}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        const auto& m = j.at("metrics");
        r.fid = get(m, "fid");
        r.mm_dist = get(m, "mm_dist");
        r.top1 = get(m, "r_precision_top1");
        r.top2 = get(m, "r_precision_top2");
        r.top3 = get(m, "r_precision_top3");
        r.diversity = get(m, "diversity");
        r.recon = get(m, "recon");
        r.vel = get(m, "vel");
        r.dist = get(m, "dist");
        r.absent = j.at("absent").get<std::map<std::string, std::string>>();
        r.evaluated = j.at("counts").at("evaluated").get<long>();
        r.excluded = j.at("counts").at("excluded").get<long>();
        r.fid_jitter = j.at("fid_jitter").get<bool>();
        r.config = j.at("config");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("eval report: ") + e.what());
    }
    return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
    io::write_file_atomic(path, to_json().dump(2) + "\n");
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
    try {
        return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("eval report " + path.string() + ": " + e.what());
    }
}

EvalReport evaluate(const std::vector<EvalItem>& items, const data::Corpus& gt, const FeatureExtractor& fx,
                    const EvalConfig& cfg) {
    EvalReport r;
    r.config = to_json(cfg);
    std::vector<data::MotionSequence> real, gen, gen_gt;
    std::vector<std::string> gen_text;
    std::vector<const EvalItem*> ok;
    for (const auto& it : items) {
        const data::MotionSequence* m = gt.find(it.motion_id);
        if (m == nullptr) {
            ++r.excluded;
            continue;
        }
        data::MotionSequence g = gt.stats.empty() ? *m : data::normalize(*m, gt.stats);
        real.push_back(g);
        if (!it.generated || it.generated->length() < 2) {
            ++r.excluded;
            continue;
        }
        gen.push_back(*it.generated);
        gen_gt.push_back(std::move(g));
        gen_text.push_back(it.text);
        ok.push_back(&it);
    }
    r.evaluated = static_cast<long>(ok.size());

    const auto n = static_cast<Eigen::Index>(gen.size());
    Matrix gen_f, text_f;
    if (n > 0) {
        gen_f = fx.embed_motions(gen);
        text_f = fx.embed_texts(gen_text);
    }
    if (n >= 2 && real.size() >= 2) {
        const FidResult f = fid(fx.embed_motions(real), gen_f);
        r.fid = f.value;
        r.fid_jitter = f.jittered;
    } else {
        r.absent["fid"] = "fewer than 2 generated or reference motions";
    }
    if (n >= 1) {
        r.mm_dist = mm_dist(text_f, gen_f);
    } else {
        r.absent["mm_dist"] = "no generated motions";
    }
    const int pool = static_cast<int>(std::min<Eigen::Index>(cfg.r_precision_pool, n));
    r.config["r_precision_pool_effective"] = pool;
    if (pool >= 4) {
        const std::vector<double> rp = r_precision(gen_f, text_f, pool, 3, cfg.seed);
        r.top1 = rp[0];
        r.top2 = rp[1];
        r.top3 = rp[2];
    } else {
        r.absent["r_precision"] = "fewer than 4 generated motions for a retrieval pool";
    }
    const int sd = std::min<int>(cfg.diversity_subset, static_cast<int>(n / 2));
    r.config["diversity_subset_effective"] = sd;
    if (sd >= 1) {
        r.diversity = diversity(gen_f, sd, cfg.seed);
    } else {
        r.absent["diversity"] = "fewer than 2 generated motions";
    }

    double recon_sum = 0.0, vel_sum = 0.0, dist_sum = 0.0;
    int recon_n = 0, vel_n = 0, dist_n = 0;
    for (std::size_t i = 0; i < ok.size(); ++i) {
        const EvalItem& it = *ok[i];
        const data::MotionSequence& g = gen[i];
        const data::MotionSequence& t = gen_gt[i];
        if (it.task == instr::TaskKind::TextInit || it.task == instr::TaskKind::TextLast) {
            const auto w = static_cast<int>(it.positions.size());
            if (w == 0 || g.length() < w) continue;
            const Matrix cond = rows_at(t.frames, it.positions);
            std::vector<int> gpos(static_cast<std::size_t>(w));
            const int start = it.task == instr::TaskKind::TextInit ? 0 : static_cast<int>(g.length()) - w;
            std::iota(gpos.begin(), gpos.end(), start);
            recon_sum += recon_loss(g, cond, gpos);
            ++recon_n;
            try {
                vel_sum += vel_loss(g, t, it.positions,
                                    it.task == instr::TaskKind::TextInit ? Align::Leading : Align::Trailing,
                                    cfg.vel_mode);
                ++vel_n;
            } catch (const DomainError&) {
                // No boundary step fits this pair; it does not count toward Vel.
            }
        } else if (it.task == instr::TaskKind::TextKey && !it.positions.empty()) {
            dist_sum += key_dist(g, rows_at(t.frames, it.positions));
            ++dist_n;
        }
    }
    if (recon_n > 0) {
        r.recon = recon_sum / recon_n;
    } else {
        r.absent["recon"] = "no init/last items with a generated motion";
    }
    if (vel_n > 0) {
        r.vel = vel_sum / vel_n;
    } else {
        r.absent["vel"] = "no init/last items with a usable boundary step";
    }
    if (dist_n > 0) {
        r.dist = dist_sum / dist_n;
    } else {
        r.absent["dist"] = "no keyframe items with a generated motion";
    }
    return r;
}

}  // namespace mgpt::eval
