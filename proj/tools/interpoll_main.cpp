#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "interpoll/harness.hpp"

using namespace interpoll;
namespace fs = std::filesystem;

namespace {

// the pieces of the config a single run needs; full cross-method validation
// only applies to `run`
void validate_single(const ExperimentConfig& cfg) {
    if (cfg.generator.kind == GeneratorKind::planted)
        validate(cfg.generator.planted());
    else
        validate(cfg.generator.prefix());
    cfg.schedule.policy.lambda_dist.validate();
    cfg.schedule.mixup_lambda.validate();
    cfg.schedule.lisa_lambda.validate();
}

struct LoadedData {
    Dataset train;
    Dataset id_test;   // planted only
    Dataset ood_test;
    bool has_id = false;
};

LoadedData make_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.generator.kind == GeneratorKind::planted) {
        PlantedSplits s = gen_planted_shortcut(cfg.generator.planted());
        d.train = std::move(s.train);
        d.id_test = std::move(s.id_test);
        d.ood_test = std::move(s.ood_test);
        d.has_id = true;
    } else {
        PrefixSplits s = gen_prefix_shortcut(cfg.generator.prefix());
        d.train = std::move(s.train);
        d.ood_test = std::move(s.test);
    }
    return d;
}

void cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
    validate_single(cfg);
    const LoadedData d = make_data(cfg);
    fs::create_directories(out_dir);
    save_dataset(d.train, out_dir + "/train.jsonl");
    if (d.has_id) {
        save_dataset(d.id_test, out_dir + "/id_test.jsonl");
        save_dataset(d.ood_test, out_dir + "/ood_test.jsonl");
    } else {
        save_dataset(d.ood_test, out_dir + "/test.jsonl");
    }
    std::cout << "wrote " << d.train.size() << " train examples (vocab "
              << d.train.vocab_size << ", " << d.train.num_classes << " classes) to "
              << out_dir << "\n";
}

void cmd_train(const std::string& config_path, const std::string& method_s,
               std::uint64_t seed, const std::string& out_dir) {
    ExperimentConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
    validate_single(cfg);
    const Method method = method_from_name(method_s);
    const LoadedData d = make_data(cfg);

    ModelConfig arch = cfg.learner;
    arch.vocab_size = d.train.vocab_size;
    arch.num_classes = cfg.generator.num_classes;
    arch.init_seed = derive_seed(seed, "model-init");
    TrainConfig tc = cfg.schedule;
    tc.method = method;
    tc.seed = derive_seed(seed, "train");

    GroupAssignment assignment;
    if (method == Method::interpoll) {
        const AuxResult aux = train_auxiliary(d.train, cfg.auxiliary, arch, tc, seed);
        assignment = infer_min_maj(aux.model, d.train,
                                   msg("aux=", aux_kind_name(cfg.auxiliary.kind),
                                       " seed=", seed));
    }

    EvalSets evals;
    if (d.has_id) evals.id_test = &d.id_test;
    evals.ood_test = &d.ood_test;

    Model model(arch);
    const TrainResult res =
        train(model, d.train, tc, method == Method::interpoll ? &assignment : nullptr,
              evals);
    fs::create_directories(out_dir);
    save_metrics(res.metrics, out_dir + "/metrics.csv");
    model.save(out_dir + "/model.bin");
    std::cout << method_s << " seed " << seed << ": ";
    if (d.has_id) std::cout << "id_test " << fmt_double(res.metrics.id_test_acc) << ", ";
    std::cout << "ood_test " << fmt_double(res.metrics.ood_test_acc) << ", minority "
              << fmt_double(res.metrics.minority_test_acc) << ", majority "
              << fmt_double(res.metrics.majority_test_acc) << "\n"
              << "wrote " << out_dir << "/metrics.csv and " << out_dir << "/model.bin\n";
}

void cmd_probe(const std::string& model_path, const std::string& data_path,
               std::uint64_t seed, int layer) {
    const Model model = Model::load(model_path);
    const Dataset d = load_dataset(data_path);
    std::optional<std::size_t> cut;
    if (layer >= 0) cut = static_cast<std::size_t>(layer);
    const ProbeTask task = shortcut_probe_task(model, d, seed, cut);
    const ProbeResult res = mdl_probe(task);
    std::cout << "uniform_bits " << fmt_double(res.uniform_bits) << "\n"
              << "online_bits " << fmt_double(res.online_bits) << "\n"
              << "compression " << fmt_double(res.compression) << "\n"
              << "probe_accuracy " << fmt_double(res.probe_accuracy) << "\n";
    for (std::size_t i = 0; i < res.block_bits.size(); ++i)
        std::cout << "block " << i << " ends " << res.schedule[i] << " bits "
                  << fmt_double(res.block_bits[i]) << "\n";
}

void cmd_report(const std::string& dir) { std::cout << aggregate_main_from_disk(dir); }

void cmd_run(const std::string& config_path, const std::string& out_override) {
    ExperimentConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    const Report rep = run_experiment(cfg);
    std::cout << "experiment '" << cfg.name << "': " << rep.runs.size() << " runs, "
              << rep.probes.size() << " probes into " << cfg.output_dir << "\n\n"
              << aggregate_main_from_disk(cfg.output_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shortcut-learning experiment workbench"};
    app.require_subcommand(0, 1);
    bool print_default = false;
    app.add_flag("--print-default-config", print_default,
                 "print the built-in experiment config and exit");

    std::string config_path, out_dir = "data", method = "erm", model_path, data_path;
    std::string run_out, report_dir = "results";
    std::uint64_t seed = 1;
    int layer = -1;

    CLI::App* gen = app.add_subcommand("gen-data", "generate dataset splits");
    gen->add_option("--config", config_path, "experiment config file");
    gen->add_option("--out", out_dir, "output directory")->capture_default_str();

    CLI::App* tr = app.add_subcommand("train", "one training run");
    tr->add_option("--config", config_path, "experiment config file");
    tr->add_option("--method", method, "erm|interpoll|mixup|lisa")->capture_default_str();
    tr->add_option("--seed", seed, "run seed")->capture_default_str();
    tr->add_option("--out", run_out, "output directory")->default_str("run_out");

    CLI::App* pr = app.add_subcommand("probe", "shortcut MDL probe of a checkpoint");
    pr->add_option("--model", model_path, "model checkpoint")->required();
    pr->add_option("--data", data_path, "planted dataset (jsonl)")->required();
    pr->add_option("--seed", seed, "probe seed")->capture_default_str();
    pr->add_option("--layer", layer, "encoder cut (default: final layer)");

    CLI::App* re = app.add_subcommand("report", "re-aggregate main runs from disk");
    re->add_option("--dir", report_dir, "experiment output directory")
        ->capture_default_str();

    CLI::App* ru = app.add_subcommand("run", "full experiment: data, runs, analyses");
    ru->add_option("--config", config_path,
                   "experiment config file (omit for the built-in default)");
    ru->add_option("--out", run_out, "override the config's output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // bad flags are config errors
    }

    try {
        if (print_default) {
            std::cout << serialize_config(default_config());
            return 0;
        }
        if (gen->parsed()) cmd_gen_data(config_path, out_dir);
        else if (tr->parsed())
            cmd_train(config_path, method, seed, run_out.empty() ? "run_out" : run_out);
        else if (pr->parsed()) cmd_probe(model_path, data_path, seed, layer);
        else if (re->parsed()) cmd_report(report_dir);
        else if (ru->parsed()) cmd_run(config_path, run_out);
        else std::cout << app.help();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
