#include "lgdml/cli.hpp"

#include "lgdml/config.hpp"
#include "lgdml/dataset.hpp"
#include "lgdml/error.hpp"
#include "lgdml/evalkit.hpp"
#include "lgdml/gradcheck.hpp"
#include "lgdml/matrix_io.hpp"
#include "lgdml/pseudolabeler.hpp"
#include "lgdml/synth.hpp"
#include "lgdml/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace lgdml {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr double kGradcheckExitThreshold = 1e-4;

void write_json(const fs::path& path, const json& j) {
    atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

fs::path sibling_names(const fs::path& matrix_path) {
    fs::path p = matrix_path;
    p.replace_extension();
    return p.string() + "_names.txt";
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string output;
    std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg = load_config(a.config);
    if (!a.data.empty()) cfg.data = a.data;
    if (!a.output.empty()) cfg.output = a.output;
    if (a.seed) cfg.seed = *a.seed;
    if (cfg.data.empty()) fail(ErrorCode::BadConfig, "no data directory given");
    if (cfg.output.empty()) fail(ErrorCode::BadConfig, "no output directory given");
    const DatasetBundle data = load_bundle(cfg.data);
    const TrainResult result = train(cfg, data);

    const fs::path out(cfg.output);
    fs::create_directories(out);
    write_json(out / "config.json", config_to_json(cfg));
    save_checkpoint(out / "checkpoint.lgck", result.best);
    atomic_write(out / "history.csv", [&](std::ostream& os) { write_history_csv(os, result.history); });
    std::cout << "best epoch " << result.best.epoch << ", checkpoint " << (out / "checkpoint.lgck").string() << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::vector<int> ks{1, 2, 4, 8};
    std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const DatasetBundle data = load_bundle(a.data);
    const EvalReport report = evaluate(embed(ckpt.head, data.test_features), data.test_labels, a.ks, a.seed);
    std::ostringstream text;
    write_eval_report(text, report);
    json j = json::parse(text.str());
    j["run"] = {{"checkpoint", a.checkpoint}, {"data", a.data}, {"ks", a.ks}, {"seed", a.seed}};
    j["config"] = config_to_json(ckpt.config);
    if (a.out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(a.out, j);
    }
    return 0;
}

struct PseudolabelArgs {
    std::string posteriors;
    std::string names;
    std::string labels;
    std::string level = "class";
    std::string out;
    int k = 5;
};

int run_pseudolabel(const PseudolabelArgs& a) {
    PosteriorMatrix post;
    post.data = read_matrix(a.posteriors).values;
    post.class_names = read_lines(a.names.empty() ? sibling_names(a.posteriors) : fs::path(a.names));
    renormalize_posteriors(post);
    const GuidanceLevel level = parse_guidance_level(a.level);
    PseudolabelAssignment assign;
    if (level == GuidanceLevel::class_level) {
        if (a.labels.empty()) fail(ErrorCode::InvalidArgument, "class-level pseudolabels need --labels");
        assign = class_pseudolabels(post, read_labels(a.labels), a.k);
    } else {
        assign = sample_pseudolabels(post, a.k);
    }
    const json run = {{"posteriors", a.posteriors}, {"names", a.names}, {"labels", a.labels},
                      {"level", a.level},           {"k", a.k}};
    auto emit = [&](std::ostream& os) {
        os << "# " << run.dump() << '\n';
        write_assignment_report(os, assign);
    };
    if (a.out.empty()) {
        emit(std::cout);
    } else {
        atomic_write(a.out, emit);
    }
    return 0;
}

struct GradcheckArgs {
    std::vector<std::string> losses;
    std::uint64_t seed = 0;
    double step = 1e-6;
    int instances = 20;
};

int run_gradcheck(const GradcheckArgs& a) {
    const GradcheckReport report = gradcheck(a.losses, a.seed, a.step, a.instances);
    write_gradcheck_report(std::cout, report);
    bool ok = report.max_rel_error <= kGradcheckExitThreshold;
    for (const auto& row : report.rows) ok = ok && row.max_fixed_entry_grad == 0.0;
    if (!ok) std::cerr << "gradcheck failed\n";
    return ok ? 0 : 1;
}

struct AnalyzeArgs {
    std::string checkpoint;
    std::string data;
    std::string lang;
    std::string lang_names;
    std::string split = "test";
    std::string out;
    int top_n = 20;
    int top_classes = 5;
};

int run_analyze(const AnalyzeArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const DatasetBundle data = load_bundle(a.data);
    std::optional<LanguageTable> lang;
    if (!a.lang.empty()) {
        lang = load_language_table(a.lang, a.lang_names.empty() ? sibling_names(a.lang) : fs::path(a.lang_names));
    } else if (data.class_language) {
        lang = data.class_language;
    } else {
        fail(ErrorCode::GuidanceInputMissing, "no language table given and the bundle has none");
    }
    if (a.split != "test" && a.split != "train") fail(ErrorCode::InvalidArgument, "--split must be test or train");
    const bool test = a.split == "test";
    const MatD emb = embed(ckpt.head, test ? data.test_features : data.train_features);
    const Labels& labels = test ? data.test_labels : data.train_labels;
    const auto& g = ckpt.config.guidance;
    const RetrievalProfile profile = semantic_retrieval_profile(emb, labels, data.class_names, *lang, a.top_n, a.top_classes);
    const double divergence = alignment_divergence(emb, labels, data.class_names, *lang, g.gamma_lang, g.temperature);

    const fs::path out = a.out.empty() ? fs::path(".") : fs::path(a.out);
    fs::create_directories(out);
    atomic_write(out / "retrieval_profile.csv", [&](std::ostream& os) { write_retrieval_profile_csv(os, profile); });
    json j;
    j["alignment_divergence"] = divergence;
    j["run"] = {{"checkpoint", a.checkpoint}, {"data", a.data},   {"lang", a.lang},
                {"split", a.split},           {"top_n", a.top_n}, {"top_classes", a.top_classes}};
    j["config"] = config_to_json(ckpt.config);
    write_json(out / "analysis.json", j);
    std::cout << "alignment_divergence " << divergence << '\n';
    return 0;
}

struct SynthArgs {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
    SynthSpec spec;
    if (!a.spec.empty()) {
        std::ifstream in(a.spec);
        if (!in) fail(ErrorCode::Io, "cannot read " + a.spec);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::BadConfig, e.what());
        }
        spec = synth_spec_from_json(j);
    }
    if (a.seed) spec.seed = *a.seed;
    validate(spec);
    const SynthResult result = synth_dataset(spec);
    save_bundle(a.out, result.bundle);
    json j = synth_spec_to_json(spec);
    write_json(fs::path(a.out) / "synth_spec.json", j);
    std::cout << "language/hierarchy agreement " << result.language_hierarchy_agreement << '\n';
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Language-guided deep metric learning toolkit"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train an embedding head");
    train_cmd->add_option("--config", train_args.config, "Config document (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--data", train_args.data, "Dataset bundle directory (overrides config)");
    train_cmd->add_option("--output", train_args.output, "Output directory (overrides config)");
    train_cmd->add_option("--seed", train_args.seed, "Seed (overrides config)");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Retrieval metrics on the held-out split");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval_args.data)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", eval_args.out, "Report path (stdout if absent)");
    eval_cmd->add_option("--k", eval_args.ks, "Recall cut-offs")->capture_default_str();
    eval_cmd->add_option("--seed", eval_args.seed, "Clustering seed")->capture_default_str();

    PseudolabelArgs pl_args;
    auto* pl_cmd = app.add_subcommand("pseudolabel", "Top-k pseudo class names from classifier posteriors");
    pl_cmd->add_option("--posteriors", pl_args.posteriors)->required()->check(CLI::ExistingFile);
    pl_cmd->add_option("--names", pl_args.names, "Pretrain class names (default: <posteriors>_names.txt)");
    pl_cmd->add_option("--labels", pl_args.labels, "Label file, one integer per line");
    pl_cmd->add_option("--k", pl_args.k)->capture_default_str();
    pl_cmd->add_option("--level", pl_args.level)->check(CLI::IsMember({"class", "sample"}))->capture_default_str();
    pl_cmd->add_option("--out", pl_args.out, "Report path (stdout if absent)");

    GradcheckArgs gc_args;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gc_cmd->add_option("--loss", gc_args.losses, "Loss name; repeatable (default: all)")
        ->check(CLI::IsMember(gradcheck_losses()));
    gc_cmd->add_option("--seed", gc_args.seed)->capture_default_str();
    gc_cmd->add_option("--step", gc_args.step)->check(CLI::Range(1e-8, 1e-4))->capture_default_str();
    gc_cmd->add_option("--instances", gc_args.instances)->check(CLI::PositiveNumber)->capture_default_str();

    AnalyzeArgs an_args;
    auto* an_cmd = app.add_subcommand("analyze", "Semantic retrieval profile and alignment divergence");
    an_cmd->add_option("--checkpoint", an_args.checkpoint)->required()->check(CLI::ExistingFile);
    an_cmd->add_option("--data", an_args.data)->required()->check(CLI::ExistingDirectory);
    an_cmd->add_option("--lang", an_args.lang, "Language table matrix (default: the bundle's class table)");
    an_cmd->add_option("--lang-names", an_args.lang_names, "Names sidecar (default: <lang>_names.txt)");
    an_cmd->add_option("--split", an_args.split)->check(CLI::IsMember({"test", "train"}))->capture_default_str();
    an_cmd->add_option("--out", an_args.out, "Output directory");
    an_cmd->add_option("--top-n", an_args.top_n)->capture_default_str();
    an_cmd->add_option("--top-classes", an_args.top_classes)->capture_default_str();

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic fixture bundle");
    synth_cmd->add_option("--spec", synth_args.spec, "Synth spec (JSON); defaults when absent");
    synth_cmd->add_option("--out", synth_args.out)->required();
    synth_cmd->add_option("--seed", synth_args.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return run_train(train_args);
        if (*eval_cmd) return run_eval(eval_args);
        if (*pl_cmd) return run_pseudolabel(pl_args);
        if (*gc_cmd) return run_gradcheck(gc_args);
        if (*an_cmd) return run_analyze(an_args);
        if (*synth_cmd) return run_synth(synth_args);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return e.code() == ErrorCode::NonFiniteLoss ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

}  // namespace lgdml
