// SPDX-License-Identifier: Apache-2.0
//
// mgpt: data preparation, training, generation, evaluation and rendering.

#include "config_file.hpp"
#include "render.hpp"

#include "mgpt/error.hpp"
#include "mgpt/io.hpp"
#include "mgpt/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using namespace mgpt;
using nlohmann::json;

/// Bad or missing flags; reported with exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string cache;

    pipeline::RunConfig run() const { return cli::load_run_config(config, sets); }

    fs::path cache_dir() const {
        fs::path p = cache;
        if (p.empty()) {
            const char* env = std::getenv("MGPT_CACHE");
            p = env && *env ? env : ".mgpt-cache";
        }
        fs::create_directories(p);
        return p;
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "YAML run configuration");
    cmd->add_option("--set", c.sets, "Override a config value, e.g. lm.schedule.steps=200");
    cmd->add_option("--cache", c.cache, "Checkpoint directory (default: $MGPT_CACHE or .mgpt-cache)");
}

fs::path require(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw IoError("missing " + what + ": " + p.string());
    return p;
}

void write_manifest(const fs::path& path, const std::string& command, const pipeline::RunConfig& c,
                    const json& inputs, const json& outputs) {
    const json m = {{"command", command},
                    {"config", pipeline::to_json(c)},
                    {"config_hash", pipeline::config_hash(c)},
                    {"seed", c.seed},
                    {"version", std::string(io::version())},
                    {"inputs", inputs},
                    {"outputs", outputs}};
    io::write_file_atomic(path, m.dump(2) + "\n");
}

fs::path manifest_for(const fs::path& artifact) { return fs::path(artifact.string() + ".manifest.json"); }

data::Corpus load_corpus(const std::string& dir) {
    if (dir.empty()) throw UsageError("--data is required");
    return data::load_dataset(dir);
}

// --- prepare-data ----------------------------------------------------------------

struct PrepareArgs {
    Common common;
    bool synth = false;
    std::string from;
    std::string out;
    std::uint64_t seed = 0;
    int n = 0;
};

void cmd_prepare(PrepareArgs& a, CLI::App* cmd) {
    auto c = a.common.run();
    if (cmd->count("--seed")) c.seed = a.seed;
    if (a.n > 0) c.synth.n_clips = a.n;
    if (a.synth == !a.from.empty()) throw UsageError("prepare-data needs exactly one of --synth or --from");
    data::Corpus corpus = a.synth ? pipeline::prepare_synth(c) : data::load_dataset(a.from);
    fs::create_directories(a.out);
    data::export_dataset(corpus, a.out);
    write_manifest(fs::path(a.out) / "manifest.json", "prepare-data", c,
                   {{"source", a.synth ? "synthetic" : a.from}}, {{"clips", corpus.size()}});
    std::cout << json{{"dir", a.out}, {"clips", corpus.size()}, {"feature_dim", corpus.feature_dim}}.dump() << "\n";
}

// --- train-vqvae -----------------------------------------------------------------

struct DataArgs {
    Common common;
    std::string data;
};

void cmd_train_vqvae(DataArgs& a) {
    const auto c = a.common.run();
    const auto corpus = load_corpus(a.data);
    const auto res = pipeline::train_vqvae_stage(corpus, c);
    const fs::path out = a.common.cache_dir() / "vqvae.ckpt";
    res.model.save(out);
    const json summary = {{"checkpoint", out.string()},
                          {"initial_recon_mse", res.log.initial_recon_mse},
                          {"final_recon_mse", res.log.final_recon_mse},
                          {"codebook_usage", res.log.usage_fraction}};
    write_manifest(manifest_for(out), "train-vqvae", c, {{"data", a.data}}, summary);
    std::cout << summary.dump() << "\n";
}

// --- train-lm --------------------------------------------------------------------

void cmd_train_lm(DataArgs& a) {
    const auto c = a.common.run();
    const fs::path cache = a.common.cache_dir();
    const auto corpus = load_corpus(a.data);
    const auto vq = vq::VqVae::load(require(cache / "vqvae.ckpt", "VQ-VAE checkpoint (run train-vqvae first)"));
    const auto instructions = pipeline::instructions_stage(corpus, vq, c, data::Split::Train, c.tasks);
    instr::write_jsonl(cache / "instructions.jsonl", instructions);

    // The base is pretrained once per cache; a changed config or corpus rebuilds it.
    const fs::path base_path = cache / "base.ckpt";
    const fs::path base_manifest = manifest_for(base_path);
    const std::string key =
        pipeline::config_hash(c) + ":" + io::hex64(io::fnv1a64(io::read_file(cache / "instructions.jsonl")));
    pipeline::BaseStage base;
    bool reused = false;
    if (fs::exists(base_path) && fs::exists(base_manifest) &&
        json::parse(io::read_file(base_manifest)).at("outputs").value("key", "") == key) {
        auto loaded = lm::TransformerLm::load(base_path);
        base.model = std::move(loaded.model);
        base.vocab = std::move(loaded.vocab);
        base.budget = lm::answer_budget(base.vocab, instructions, c.budget_factor);
        reused = true;
    }
    if (!reused) {
        base = pipeline::base_stage(instructions, vq.config().codebook_size, c);
        base.model.save(base_path, base.vocab);
        write_manifest(base_manifest, "train-lm:base", c, {{"data", a.data}},
                       {{"key", key}, {"pretrain_final_loss", base.log.final_loss}});
    }
    const auto lora = pipeline::lora_stage(base, instructions, c);
    const fs::path adapter_path = cache / "adapter.ckpt";
    lora.adapter.save(adapter_path);
    io::write_file_atomic(cache / "lm.json",
                          json{{"budget", base.budget},
                               {"variant", std::string(instr::to_string(c.variant))}}.dump(2) + "\n");
    const json summary = {{"base", base_path.string()},
                          {"base_reused", reused},
                          {"adapter", adapter_path.string()},
                          {"samples", instructions.size()},
                          {"lora_initial_loss", lora.log.initial_loss},
                          {"lora_final_loss", lora.log.final_loss},
                          {"trainable_ratio", lm::trainable_ratio(lora.adapter, base.model.config())}};
    write_manifest(manifest_for(adapter_path), "train-lm", c, {{"data", a.data}}, summary);
    std::cout << summary.dump() << "\n";
}

// --- train-extractor -------------------------------------------------------------

void cmd_train_extractor(DataArgs& a) {
    const auto c = a.common.run();
    const auto corpus = load_corpus(a.data);
    const auto res = pipeline::extractor_stage(corpus, c);
    const fs::path out = a.common.cache_dir() / "extractor.ckpt";
    res.extractor.save(out);
    const json summary = {{"checkpoint", out.string()}, {"val_matched_rate", res.log.val_matched_rate}};
    write_manifest(manifest_for(out), "train-extractor", c, {{"data", a.data}}, summary);
    std::cout << summary.dump() << "\n";
}

// --- generate --------------------------------------------------------------------

struct LoadedModels {
    vq::VqVae vq;
    lm::TransformerLm::Loaded base;
    lm::AdapterState adapter;
    int budget = 0;
    instr::PromptVariant variant = instr::PromptVariant::V0;

    gen::Models view() const { return {&vq, &base.model, &adapter, &base.vocab, variant}; }
};

LoadedModels load_models(const fs::path& cache) {
    LoadedModels m;
    m.vq = vq::VqVae::load(require(cache / "vqvae.ckpt", "VQ-VAE checkpoint (run train-vqvae first)"));
    m.base = lm::TransformerLm::load(require(cache / "base.ckpt", "base LM checkpoint (run train-lm first)"));
    m.adapter = lm::AdapterState::load(require(cache / "adapter.ckpt", "adapter checkpoint (run train-lm first)"));
    const json meta = json::parse(io::read_file(require(cache / "lm.json", "LM metadata (run train-lm first)")));
    m.budget = meta.at("budget").get<int>();
    m.variant = instr::variant_from_string(meta.at("variant").get<std::string>());
    return m;
}

struct GenerateArgs {
    Common common;
    std::string task = "text";
    std::string text;
    std::string cond;
    std::vector<int> cond_rows;
    std::string out;
    bool dump_prompt = false;
    bool batch = false;
    std::string data;
    std::string split = "test";
};

void write_raw(const fs::path& path, const data::MotionSequence& normalized, const vq::VqVae& vq) {
    data::write_mfa(path, data::denormalize(normalized, vq.stats).frames);
}

void cmd_generate(GenerateArgs& a) {
    const auto c = a.common.run();
    const auto task = instr::task_from_string(a.task);
    if (a.out.empty()) throw UsageError("generate needs --out");
    const bool needs_cond = task != instr::TaskKind::TextOnly;
    if (!a.batch) {
        if (a.text.empty()) throw UsageError("generate needs --text (or --batch)");
        if (needs_cond && a.cond.empty()) throw UsageError("--task " + a.task + " requires --cond <frames.mfa>");
        if (!needs_cond && !a.cond.empty()) throw UsageError("--task text takes no --cond");
    }
    const LoadedModels models = load_models(a.common.cache_dir());
    const auto sampling = pipeline::sampling_for(c, models.budget);

    if (a.batch) {
        const auto corpus = load_corpus(a.data);
        const auto split = data::split_from_string(a.split);
        const auto out = gen::batch_generate(
            corpus, split, task, models.view(), sampling,
            pipeline::derive_seed(c.seed, "conditions:" + std::string(instr::to_string(task))));
        fs::create_directories(fs::path(a.out) / "motions");
        std::string lines;
        for (std::size_t i = 0; i < out.items.size(); ++i) {
            const auto& it = out.items[i];
            json rec = {{"motion_id", it.motion_id},
                        {"text", it.text},
                        {"task", std::string(instr::to_string(it.task))},
                        {"positions", it.condition.positions}};
            if (it.result) {
                const std::string file = "motions/" + std::to_string(i) + ".mfa";
                write_raw(fs::path(a.out) / file, it.result->motion, models.vq);
                rec["file"] = file;
                rec["tokens"] = it.result->tokens.indices;
                rec["stop"] = std::string(gen::to_string(it.result->stop));
            } else {
                rec["file"] = nullptr;
                rec["error"] = it.error;
            }
            lines += rec.dump() + "\n";
        }
        io::write_file_atomic(fs::path(a.out) / "items.jsonl", lines);
        const json summary = {{"dir", a.out}, {"items", out.items.size()}, {"failures", out.failures}};
        write_manifest(fs::path(a.out) / "manifest.json", "generate", c,
                       {{"data", a.data}, {"split", a.split}, {"task", a.task}, {"sampling", gen::to_json(sampling)}},
                       summary);
        std::cout << summary.dump() << "\n";
        return;
    }

    std::optional<Matrix> pose;
    if (needs_cond) {
        data::MotionSequence raw;
        raw.frames = data::read_mfa(require(a.cond, "condition file"));
        if (!a.cond_rows.empty()) {
            Matrix picked(static_cast<Eigen::Index>(a.cond_rows.size()), raw.frames.cols());
            for (std::size_t i = 0; i < a.cond_rows.size(); ++i) {
                const int row = a.cond_rows[i];
                if (row < 0 || row >= raw.frames.rows()) {
                    throw UsageError("--cond-rows: row " + std::to_string(row) + " outside [0, " +
                                     std::to_string(raw.frames.rows()) + ")");
                }
                picked.row(static_cast<Eigen::Index>(i)) = raw.frames.row(row);
            }
            raw.frames = picked;
        }
        pose = data::normalize(raw, models.vq.stats).frames;
    }
    const auto r = gen::generate_motion(task, a.text, pose, models.view(), sampling);
    if (a.dump_prompt) std::cerr << r.prompt << "\n";
    write_raw(a.out, r.motion, models.vq);
    const json summary = {{"out", a.out},
                          {"tokens", r.tokens.indices},
                          {"frames", r.motion.length()},
                          {"stop", std::string(gen::to_string(r.stop))},
                          {"truncated", r.truncated}};
    write_manifest(manifest_for(a.out), "generate", c,
                   {{"task", a.task}, {"text", a.text}, {"cond", a.cond}, {"sampling", gen::to_json(sampling)}},
                   summary);
    std::cout << summary.dump() << "\n";
}

// --- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
    Common common;
    std::string results, gt, extractor, out;
};

void cmd_evaluate(EvaluateArgs& a) {
    const auto c = a.common.run();
    const auto corpus = data::load_dataset(a.gt);
    const auto fx = eval::FeatureExtractor::load(require(a.extractor, "extractor checkpoint"));
    const fs::path items_path = require(fs::path(a.results) / "items.jsonl", "generation results");
    std::vector<eval::EvalItem> items;
    std::istringstream lines(io::read_file(items_path));
    std::string line;
    long lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json r = json::parse(line);
            eval::EvalItem it;
            it.motion_id = r.at("motion_id").get<std::string>();
            it.text = r.at("text").get<std::string>();
            it.task = instr::task_from_string(r.at("task").get<std::string>());
            it.positions = r.at("positions").get<std::vector<int>>();
            if (!r.at("file").is_null()) {
                data::MotionSequence raw;
                raw.frames = data::read_mfa(fs::path(a.results) / r.at("file").get<std::string>());
                it.generated = data::normalize(raw, corpus.stats);
            }
            items.push_back(std::move(it));
        } catch (const json::exception& e) {
            throw DataError(items_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    eval::EvalConfig ec = c.eval;
    ec.seed = pipeline::derive_seed(c.seed, "eval");
    const fs::path gen_manifest = fs::path(a.results) / "manifest.json";
    if (fs::exists(gen_manifest)) {
        ec.sampling = json::parse(io::read_file(gen_manifest)).at("inputs").value("sampling", json::object());
    }
    const auto report = eval::evaluate(items, corpus, fx, ec);
    report.save(a.out);
    write_manifest(manifest_for(a.out), "evaluate", c,
                   {{"results", a.results}, {"gt", a.gt}, {"extractor", a.extractor}}, {{"report", a.out}});
    std::cout << report.to_json()["metrics"].dump() << "\n";
}

// --- render ----------------------------------------------------------------------

struct RenderArgs {
    std::string motion, reference, out, title;
    int dims = 4;
};

void cmd_render(RenderArgs& a) {
    const Matrix frames = data::read_mfa(require(a.motion, "motion file"));
    std::optional<Matrix> ref;
    if (!a.reference.empty()) ref = data::read_mfa(require(a.reference, "reference motion file"));
    const std::string title = a.title.empty() ? fs::path(a.motion).filename().string() : a.title;
    io::write_file_atomic(a.out, cli::render_motion_svg(frames, ref, a.dims, title));
    std::cout << json{{"out", a.out}}.dump() << "\n";
}

// --- pipeline --------------------------------------------------------------------

struct PipelineArgs {
    Common common;
    std::string data;
    std::string out = "report.json";
};

void cmd_pipeline(PipelineArgs& a) {
    const auto c = a.common.run();
    const auto corpus = a.data.empty() ? pipeline::prepare_synth(c) : data::load_dataset(a.data);
    const auto res = pipeline::run_pipeline(corpus, c);
    io::write_file_atomic(a.out, res.report.dump(2) + "\n");
    write_manifest(manifest_for(a.out), "pipeline", c, {{"data", a.data.empty() ? "synthetic" : a.data}},
                   {{"report", a.out}});
    std::cout << res.report["training"].dump() << "\n";
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Motion token generation with a low-rank adapted language model"};
    app.set_version_flag("--version", std::string(io::version()));
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare-data", "Write a dataset directory (synthetic or imported)");
    add_common(p, prep.common);
    p->add_flag("--synth", prep.synth, "Generate the synthetic corpus");
    p->add_option("--from", prep.from, "Import a dataset directory");
    p->add_option("--seed", prep.seed, "Global seed");
    p->add_option("--n", prep.n, "Number of synthetic clips");
    p->add_option("--out", prep.out, "Output directory")->required();

    DataArgs vqa;
    auto* v = app.add_subcommand("train-vqvae", "Train the motion tokenizer");
    add_common(v, vqa.common);
    v->add_option("--data", vqa.data, "Dataset directory")->required();

    DataArgs lma;
    auto* l = app.add_subcommand("train-lm", "Pretrain the base LM (if needed) and train the adapter");
    add_common(l, lma.common);
    l->add_option("--data", lma.data, "Dataset directory")->required();

    DataArgs fxa;
    auto* x = app.add_subcommand("train-extractor", "Train the evaluation bi-encoder");
    add_common(x, fxa.common);
    x->add_option("--data", fxa.data, "Dataset directory")->required();

    GenerateArgs ga;
    auto* g = app.add_subcommand("generate", "Generate a motion, or a batch over a split");
    add_common(g, ga.common);
    g->add_option("--task", ga.task, "text | init | last | key");
    g->add_option("--text", ga.text, "Motion description");
    g->add_option("--cond", ga.cond, "Condition frames (.mfa, raw features)");
    g->add_option("--cond-rows", ga.cond_rows, "Use only these frames of --cond, e.g. 0,1,2,3")->delimiter(',');
    g->add_option("--out", ga.out, "Output .mfa file, or directory with --batch");
    g->add_flag("--dump-prompt", ga.dump_prompt, "Print the rendered prompt to stderr");
    g->add_flag("--batch", ga.batch, "Generate for every annotation of a split");
    g->add_option("--data", ga.data, "Dataset directory (batch mode)");
    g->add_option("--split", ga.split, "train | val | test (batch mode)");

    EvaluateArgs ea;
    auto* e = app.add_subcommand("evaluate", "Score generation results against ground truth");
    add_common(e, ea.common);
    e->add_option("--results", ea.results, "Directory written by generate --batch")->required();
    e->add_option("--gt", ea.gt, "Ground-truth dataset directory")->required();
    e->add_option("--extractor", ea.extractor, "Extractor checkpoint")->required();
    e->add_option("--out", ea.out, "Report file")->required();

    RenderArgs ra;
    auto* r = app.add_subcommand("render", "Plot a motion file as SVG");
    r->add_option("--motion", ra.motion, "Motion file (.mfa)")->required();
    r->add_option("--reference", ra.reference, "Reference motion drawn dashed");
    r->add_option("--dims", ra.dims, "Channels to plot");
    r->add_option("--title", ra.title, "Plot title");
    r->add_option("--out", ra.out, "SVG file")->required();

    PipelineArgs pa;
    auto* pl = app.add_subcommand("pipeline", "Every stage in memory, then a report");
    add_common(pl, pa.common);
    pl->add_option("--data", pa.data, "Dataset directory (default: synthetic corpus)");
    pl->add_option("--out", pa.out, "Report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForVersion& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        print_error("usage", ex.what());
        return 2;
    }

    try {
        if (*p) cmd_prepare(prep, p);
        else if (*v) cmd_train_vqvae(vqa);
        else if (*l) cmd_train_lm(lma);
        else if (*x) cmd_train_extractor(fxa);
        else if (*g) cmd_generate(ga);
        else if (*e) cmd_evaluate(ea);
        else if (*r) cmd_render(ra);
        else if (*pl) cmd_pipeline(pa);
    } catch (const UsageError& ex) {
        print_error("usage", ex.what());
        return 2;
    } catch (const Error& ex) {
        print_error(std::string(to_string(ex.kind())), ex.what());
        return 1;
    } catch (const std::exception& ex) {
        print_error("internal", ex.what());
        return 1;
    }
    return 0;
}
