// SPDX-License-Identifier: Apache-2.0

#include "mgpt/vqvae.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mgpt::vq {

namespace {

constexpr const char* kMagic = "VQV1";

void check_config(const VqVaeConfig& c) {
    if (c.codebook_size < 2) throw DomainError("vqvae: codebook size N must be >= 2");
    if (c.latent_dim < 1 || c.feature_dim < 1 || c.hidden < 1) throw DomainError("vqvae: widths must be positive");
    if (c.downsample < 1) throw DomainError("vqvae: downsample factor f must be >= 1");
    if (c.beta < 0.0) throw DomainError("vqvae: beta must be non-negative");
}

}  // namespace

QuantizeResult quantize(const LatentSeq& latent, const Codebook& codebook) {
    const Matrix& z = latent.latents;
    const Matrix& e = codebook.entries.value;
    if (z.cols() != e.cols()) {
        std::ostringstream os;
        os << "quantize: latent width " << z.cols() << " does not match codebook width " << e.cols();
        throw DomainError(os.str());
    }
    QuantizeResult out;
    out.tokens.indices.resize(static_cast<std::size_t>(z.rows()));
    out.quantized.resize(z.rows(), z.cols());
    for (Eigen::Index t = 0; t < z.rows(); ++t) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < e.rows(); ++k) {
            const double d = (z.row(t) - e.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        out.tokens.indices[static_cast<std::size_t>(t)] = best;
        out.quantized.row(t) = e.row(best);
    }
    return out;
}

LossBreakdown vqvae_loss(const Matrix& motion, const Matrix& recon, const Matrix& latent, const Matrix& quantized,
                         double beta) {
    if (beta < 0.0) throw DomainError("vqvae_loss: beta must be non-negative");
    if (motion.rows() != recon.rows() || motion.cols() != recon.cols()) {
        throw DomainError("vqvae_loss: reconstruction shape differs from motion");
    }
    if (latent.rows() != quantized.rows() || latent.cols() != quantized.cols()) {
        throw DomainError("vqvae_loss: quantized shape differs from latent");
    }
    LossBreakdown l;
    l.recon = (recon - motion).squaredNorm() / static_cast<double>(motion.size());
    l.embed = (latent - quantized).squaredNorm() / static_cast<double>(latent.size());
    l.commit_raw = l.embed;  // same value; the two terms differ only in where gradients go
    l.commit = beta * l.commit_raw;
    l.total = l.recon + l.embed + l.commit;
    return l;
}

VqVae::VqVae(const VqVaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    check_config(cfg);
    Rng rng(seed);
    const int D = cfg.feature_dim;
    const int h = cfg.hidden;
    const int d = cfg.latent_dim;
    const int f = cfg.downsample;
    enc_in_ = nn::Conv1d("enc.in", D, h, 1, 1, 0, rng);
    enc_down_ = nn::Conv1d("enc.down", h, h, f, f, 0, rng);
    enc_mid_ = nn::Conv1d("enc.mid", h, h, 1, 1, 0, rng);
    enc_out_ = nn::Conv1d("enc.out", h, d, 1, 1, 0, rng);
    dec_in_ = nn::Conv1d("dec.in", d, h, 3, 1, 1, rng);
    dec_mid1_ = nn::Conv1d("dec.mid1", h, h, 3, 1, 1, rng);
    dec_mid2_ = nn::Conv1d("dec.mid2", h, h, 3, 1, 1, rng);
    dec_out_ = nn::Conv1d("dec.out", h, D, 1, 1, 0, rng);
    codebook_.entries = Parameter("codebook", rng.uniform_matrix(cfg.codebook_size, d, 1.0 / cfg.codebook_size));
}

Eigen::Index VqVae::usable_frames(Eigen::Index T) const { return (T / cfg_.downsample) * cfg_.downsample; }

Var VqVae::encode(Graph& g, Var motion) const {
    const Matrix& x = g.value(motion);
    if (x.cols() != cfg_.feature_dim) {
        std::ostringstream os;
        os << "encode: motion has " << x.cols() << " features, model expects " << cfg_.feature_dim;
        throw DomainError(os.str());
    }
    if (x.rows() < cfg_.downsample) {
        std::ostringstream os;
        os << "encode: motion has " << x.rows() << " frames, at least " << cfg_.downsample << " required";
        throw DomainError(os.str());
    }
    Var in = x.rows() == usable_frames(x.rows()) ? motion : g.slice_rows(motion, 0, usable_frames(x.rows()));
    Var h = g.relu(enc_in_(g, in));
    h = g.relu(enc_down_(g, h));
    h = g.relu(enc_mid_(g, h));
    return enc_out_(g, h);
}

Var VqVae::decode(Graph& g, Var quantized) const {
    if (g.value(quantized).cols() != cfg_.latent_dim) throw DomainError("decode: quantized width does not match d");
    if (g.value(quantized).rows() < 1) throw DomainError("decode: empty latent sequence");
    Var h = g.relu(dec_in_(g, quantized));
    h = g.repeat_rows(h, cfg_.downsample);
    h = g.relu(dec_mid1_(g, h));
    h = g.relu(dec_mid2_(g, h));
    return dec_out_(g, h);
}

LatentSeq VqVae::encode(const data::MotionSequence& motion) const {
    Graph g(false);
    return {g.value(encode(g, g.constant(motion.frames)))};
}

data::MotionSequence VqVae::decode(const Matrix& quantized) const {
    Graph g(false);
    data::MotionSequence out;
    out.frames = g.value(decode(g, g.constant(quantized)));
    return out;
}

MotionTokenSeq VqVae::tokenize(const data::MotionSequence& motion) const { return quantize(encode(motion)).tokens; }

Matrix VqVae::lookup(const MotionTokenSeq& tokens) const {
    if (tokens.empty()) throw DomainError("detokenize: empty token sequence");
    Matrix q(static_cast<Eigen::Index>(tokens.size()), cfg_.latent_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int k = tokens.indices[i];
        if (k < 0 || k >= cfg_.codebook_size) {
            std::ostringstream os;
            os << "token " << k << " at position " << i << " is outside [0, " << cfg_.codebook_size << ")";
            throw DomainError(os.str());
        }
        q.row(static_cast<Eigen::Index>(i)) = codebook_.entries.value.row(k);
    }
    return q;
}

data::MotionSequence VqVae::detokenize(const MotionTokenSeq& tokens) const { return decode(lookup(tokens)); }

std::vector<Parameter*> VqVae::encoder_parameters() {
    std::vector<Parameter*> out;
    for (auto* c : {&enc_in_, &enc_down_, &enc_mid_, &enc_out_}) c->collect(out);
    return out;
}

std::vector<Parameter*> VqVae::decoder_parameters() {
    std::vector<Parameter*> out;
    for (auto* c : {&dec_in_, &dec_mid1_, &dec_mid2_, &dec_out_}) c->collect(out);
    return out;
}

std::vector<Parameter*> VqVae::parameters() {
    std::vector<Parameter*> out = encoder_parameters();
    for (Parameter* p : decoder_parameters()) out.push_back(p);
    out.push_back(&codebook_.entries);
    return out;
}

void VqVae::save(const std::filesystem::path& path) const {
    io::Container c;
    c.magic = kMagic;
    c.meta["config"] = {{"N", cfg_.codebook_size}, {"d", cfg_.latent_dim}, {"f", cfg_.downsample},
                        {"beta", cfg_.beta},       {"D", cfg_.feature_dim}, {"hidden", cfg_.hidden}};
    c.meta["layers"] = {"enc.in k1", "enc.down kf/sf", "enc.mid k1", "enc.out k1",
                        "dec.in k3", "upsample xf",    "dec.mid1 k3", "dec.mid2 k3", "dec.out k1"};
    for (Parameter* p : const_cast<VqVae*>(this)->parameters()) c.add(p->name, p->value);
    if (!stats.empty()) {
        c.add("stats.mean", stats.mean);
        c.add("stats.std", stats.std);
    }
    io::save_container(path, c);
}

VqVae VqVae::load(const std::filesystem::path& path) {
    const io::Container c = io::load_container(path, kMagic);
    VqVaeConfig cfg;
    const auto& j = c.meta.at("config");
    cfg.codebook_size = j.at("N").get<int>();
    cfg.latent_dim = j.at("d").get<int>();
    cfg.downsample = j.at("f").get<int>();
    cfg.beta = j.at("beta").get<double>();
    cfg.feature_dim = j.at("D").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    VqVae m(cfg, 0);
    for (Parameter* p : m.parameters()) {
        const Matrix& v = c.array(p->name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
            throw DataError("checkpoint array '" + p->name + "' has the wrong shape in " + path.string());
        }
        p->value = v;
    }
    if (c.has("stats.mean")) {
        m.stats.mean = c.array("stats.mean").row(0);
        m.stats.std = c.array("stats.std").row(0);
    }
    return m;
}

double reconstruction_mse(const VqVae& model, const std::vector<data::MotionSequence>& motions) {
    if (motions.empty()) throw DomainError("reconstruction_mse: no motions");
    double sum = 0.0;
    for (const auto& m : motions) {
        const QuantizeResult q = model.quantize(model.encode(m));
        const Matrix rec = model.decode(q.quantized).frames;
        const Matrix ref = m.frames.topRows(rec.rows());
        sum += (rec - ref).squaredNorm() / static_cast<double>(ref.size());
    }
    return sum / static_cast<double>(motions.size());
}

std::vector<long> usage_histogram(const VqVae& model, const std::vector<data::MotionSequence>& motions) {
    std::vector<long> hist(static_cast<std::size_t>(model.config().codebook_size), 0);
    for (const auto& m : motions) {
        for (int k : model.tokenize(m).indices) ++hist[static_cast<std::size_t>(k)];
    }
    return hist;
}

VqTrainResult train_vqvae(const data::Corpus& corpus, const VqVaeConfig& cfg_in, const VqTrainConfig& tc) {
    VqVaeConfig cfg = cfg_in;
    cfg.feature_dim = static_cast<int>(corpus.feature_dim);
    check_config(cfg);
    if (tc.steps < 0 || tc.batch_size < 1) throw ConfigError("train_vqvae: steps >= 0 and batch_size >= 1 required");

    std::vector<data::MotionSequence> train;
    for (const auto* m : corpus.motions_in(data::Split::Train)) {
        if (m->length() >= cfg.downsample) train.push_back(data::normalize(*m, corpus.stats));
    }
    if (train.empty()) throw TrainingError("train_vqvae: train split has no motion of at least f frames");

    VqTrainResult res{VqVae(cfg, tc.seed), {}};
    VqVae& model = res.model;
    model.stats = corpus.stats;
    Rng rng(tc.seed ^ 0x5eedULL);
    const int f = cfg.downsample;

    auto seed_codebook = [&] {
        Matrix& e = model.codebook().entries.value;
        for (int k = 0; k < cfg.codebook_size; ++k) {
            const auto& m = train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(train.size()) - 1))];
            const long start = rng.uniform_int(0, m.length() - f);
            data::MotionSequence w;
            w.frames = m.frames.middleRows(start, f);
            e.row(k) = model.encode(w).latents.row(0) + rng.normal_matrix(1, cfg.latent_dim, 1e-3);
        }
    };
    const int warmup = std::clamp(tc.warmup_steps, 0, tc.steps);
    seed_codebook();
    res.log.initial_recon_mse = reconstruction_mse(model, train);

    nn::AdamW opt(model.parameters(), nn::AdamWConfig{.lr = tc.lr});
    const int window = std::max(f, (tc.window / f) * f);
    long last_finite = -1;
    for (int step = 0; step < tc.steps; ++step) {
        const bool quantizing = step >= warmup;
        if (step == warmup && warmup > 0) seed_codebook();
        Graph g;
        std::vector<Var> totals;
        LossBreakdown mean_loss;
        for (int b = 0; b < tc.batch_size; ++b) {
            const auto& m = train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(train.size()) - 1))];
            const Eigen::Index len = std::min<Eigen::Index>(window, model.usable_frames(m.length()));
            const long start = rng.uniform_int(0, m.length() - len);
            Var x = g.constant(m.frames.middleRows(start, len));
            Var latent = model.encode(g, x);
            if (!quantizing) {
                Var l_rec = g.mse(model.decode(g, latent), x);
                totals.push_back(l_rec);
                mean_loss.recon += g.scalar(l_rec);
                continue;
            }
            const QuantizeResult q = model.quantize(LatentSeq{g.value(latent)});
            Var qv = g.gather_rows(g.param(model.codebook().entries), q.tokens.indices);
            Var recon = model.decode(g, g.straight_through(latent, qv));
            Var l_rec = g.mse(recon, x);
            Var l_emb = g.mse(g.stop_gradient(latent), qv);
            Var l_com = g.mse(latent, g.stop_gradient(qv));
            totals.push_back(g.add(g.add(l_rec, l_emb), g.scale(l_com, cfg.beta)));
            mean_loss.recon += g.scalar(l_rec);
            mean_loss.embed += g.scalar(l_emb);
            mean_loss.commit_raw += g.scalar(l_com);
        }
        const double inv_b = 1.0 / tc.batch_size;
        mean_loss.recon *= inv_b;
        mean_loss.embed *= inv_b;
        mean_loss.commit_raw *= inv_b;
        mean_loss.commit = cfg.beta * mean_loss.commit_raw;
        mean_loss.total = mean_loss.recon + mean_loss.embed + mean_loss.commit;
        if (!std::isfinite(mean_loss.total)) {
            throw TrainingError("train_vqvae: loss became non-finite at step " + std::to_string(step) +
                                    " (last finite step " + std::to_string(last_finite) + ")",
                                last_finite);
        }
        last_finite = step;
        Var loss = g.scale(g.sum(g.concat_rows(totals)), inv_b);
        g.backward(loss);
        opt.step();
        if (tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps)) {
            res.log.steps.push_back({step, mean_loss});
        }
    }

    res.log.final_recon_mse = reconstruction_mse(model, train);
    res.log.usage_histogram = usage_histogram(model, train);
    long used = 0;
    for (long c : res.log.usage_histogram) used += c > 0 ? 1 : 0;
    res.log.usage_fraction = static_cast<double>(used) / cfg.codebook_size;
    return res;
}

}  // namespace mgpt::vq
