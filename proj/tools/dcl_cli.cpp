// Command-line driver: data generation, training, evaluation, ablations,
// embedding plots and gradient checks.
//
// Exit codes: 0 success, 1 check failure or runtime error, 2 usage/config error.

#include "dcl/ablation.hpp"
#include "dcl/analysis.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/embedding.hpp"
#include "dcl/errors.hpp"
#include "dcl/fusion.hpp"
#include "dcl/gradcheck.hpp"
#include "dcl/synthdata.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
    std::string config_path;
    std::string data;
    std::string out;
    std::string checkpoint;
    std::string mode;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
};

std::string git_describe() {
#ifdef DCL_SOURCE_DIR
    const std::string cmd = "git -C \"" DCL_SOURCE_DIR "\" describe --always --dirty --tags 2>/dev/null";
    if (FILE* p = popen(cmd.c_str(), "r")) {
        char buf[256];
        std::string out;
        while (fgets(buf, sizeof buf, p)) out += buf;
        pclose(p);
        while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
        if (!out.empty()) return out;
    }
#endif
    return "unknown";
}

// Applies "key=value" overrides; value is parsed as JSON, falling back to a string.
void apply_overrides(dcl::Config& c, const std::vector<std::string>& overrides) {
    if (overrides.empty()) return;
    json j = dcl::to_json(c);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw dcl::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        if (!j.contains(key)) {
            throw dcl::ConfigError("unknown config field '" + key + "'");
        }
        try {
            j[key] = json::parse(value);
        } catch (const json::exception&) {
            j[key] = value;
        }
    }
    c = dcl::config_from_json(j);
}

dcl::Config resolve_config(const CommonArgs& a) {
    dcl::Config c = a.config_path.empty() ? dcl::Config{} : dcl::load_config(a.config_path);
    apply_overrides(c, a.overrides);
    if (!a.mode.empty()) c.mode = dcl::parse_mode(a.mode);
    if (a.seed) c.seed = *a.seed;
    c.validate();
    return c;
}

dcl::synth::DatasetSplit load_data(const std::string& path, const dcl::Config& c) {
    if (path.empty()) {
        throw dcl::ConfigError("--data is required");
    }
    if (fs::is_directory(path)) return dcl::synth::read_dataset(path);
    if (fs::is_regular_file(path)) return dcl::synth::ingest_precomputed_features(path, c);
    throw dcl::IoError("data path not found: " + path);
}

std::string data_hash(const std::string& path) {
    if (fs::is_directory(path)) return dcl::synth::dataset_hash(path);
    return dcl::synth::dataset_hash(fs::path(path).parent_path().string());
}

// The manifest is written before any computation starts.
void write_manifest(const std::string& out_dir, const std::string& command, const std::vector<std::string>& argv,
                    const dcl::Config& config, const std::string& dataset_hash, const json& outputs) {
    fs::create_directories(out_dir);
    json m = {{"command", command},
              {"argv", argv},
              {"config", dcl::to_json(config)},
              {"seed", config.seed},
              {"dataset_hash", dataset_hash},
              {"git_describe", git_describe()},
              {"outputs", outputs}};
    const std::string path = (fs::path(out_dir) / (command + "_manifest.json")).string();
    std::ofstream f(path);
    if (!f) throw dcl::IoError("cannot write " + path);
    f << m.dump(2) << '\n';
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw dcl::IoError("cannot write " + path);
    f << j.dump(2) << '\n';
}

dcl::fusion::Split parse_split(const std::string& s) {
    if (s == "train") return dcl::fusion::Split::Train;
    if (s == "val") return dcl::fusion::Split::Val;
    if (s == "test") return dcl::fusion::Split::Test;
    throw dcl::ConfigError("unknown split '" + s + "'");
}

int cmd_gen_data(const CommonArgs& a, const std::vector<std::string>& argv) {
    dcl::Config c = resolve_config(a);
    if (a.out.empty()) throw dcl::ConfigError("--out is required");
    write_manifest(a.out, "gen-data", argv, c, "", {{"dataset", a.out}});
    dcl::synth::DatasetSplit ds = dcl::synth::generate_dataset(c, c.seed);
    dcl::synth::write_dataset(ds, a.out);
    std::cout << "dataset: " << a.out << "\n"
              << "T=" << ds.T << " d=" << c.d << " d_raw=" << ds.feature_dim << "\n"
              << "pairs: train " << ds.train.size() << ", val " << ds.val.size() << ", test " << ds.test.size()
              << "\n"
              << "hash: " << dcl::synth::dataset_hash(a.out) << "\n";
    return 0;
}

int cmd_train(const CommonArgs& a, const std::vector<std::string>& argv) {
    dcl::Config c = resolve_config(a);
    if (a.out.empty()) throw dcl::ConfigError("--out is required");
    const fs::path out(a.out);
    const std::string hash = data_hash(a.data);
    write_manifest(a.out, "train", argv, c, hash,
                   {{"checkpoint", (out / "model.dclc").string()},
                    {"metrics", (out / "metrics.jsonl").string()},
                    {"summary", (out / "summary.json").string()}});
    std::cout << "dataset hash: " << hash << "\n";
    dcl::synth::DatasetSplit ds = load_data(a.data, c);
    dcl::save_config(c, (out / "config.json").string());

    dcl::fusion::FitOptions fo;
    fo.metrics_path = (out / "metrics.jsonl").string();
    fo.on_epoch = [](const dcl::fusion::EpochRecord& r) {
        std::printf("epoch %3d  loss %.4f  recon %.4f  ce %.4f  val %.3f\n", r.epoch, r.loss, r.dse.recon, r.ce,
                    r.val_accuracy);
        std::fflush(stdout);
    };
    dcl::fusion::FitResult fit = dcl::fusion::fit(ds, c, fo);
    dcl::checkpoint::save(*fit.model, (out / "model.dclc").string());

    const auto val = dcl::fusion::evaluate(*fit.model, ds, dcl::fusion::Split::Val, false);
    const auto test = dcl::fusion::evaluate(*fit.model, ds, dcl::fusion::Split::Test);
    json summary = {{"mode", dcl::to_string(c.mode)},
                    {"seed", c.seed},
                    {"best_epoch", fit.best_epoch},
                    {"val", dcl::fusion::to_json(val)},
                    {"test", dcl::fusion::to_json(test)}};
    write_json((out / "summary.json").string(), summary);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& split, const std::vector<std::string>& argv) {
    if (a.checkpoint.empty()) throw dcl::ConfigError("--checkpoint is required");
    auto model = dcl::checkpoint::load(a.checkpoint);
    if (!a.config_path.empty() || !a.mode.empty() || !a.overrides.empty()) {
        dcl::checkpoint::require_compatible(model->config, resolve_config(a), a.checkpoint);
    }
    const std::string hash = data_hash(a.data);
    if (!a.out.empty()) {
        write_manifest(a.out, "eval", argv, model->config, hash, {{"metrics", (fs::path(a.out) / "eval.json").string()}});
    }
    dcl::synth::DatasetSplit ds = load_data(a.data, model->config);
    const auto m = dcl::fusion::evaluate(*model, ds, parse_split(split));
    json j = dcl::fusion::to_json(m);
    j["split"] = split;
    j["mode"] = dcl::to_string(model->config.mode);
    if (!a.out.empty()) write_json((fs::path(a.out) / "eval.json").string(), j);
    std::cout << j.dump(2) << "\n";
    return 0;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        try {
            if (dash != std::string::npos && dash > 0) {
                const uint64_t lo = std::stoull(item.substr(0, dash));
                const uint64_t hi = std::stoull(item.substr(dash + 1));
                for (uint64_t v = lo; v <= hi; ++v) seeds.push_back(v);
            } else if (!item.empty()) {
                seeds.push_back(std::stoull(item));
            }
        } catch (const std::exception&) {
            throw dcl::ConfigError("bad seed list '" + s + "'");
        }
    }
    if (seeds.empty()) throw dcl::ConfigError("empty seed list");
    return seeds;
}

int cmd_ablate(const CommonArgs& a, const std::string& seeds_arg, const std::vector<std::string>& argv) {
    dcl::Config c = resolve_config(a);
    const auto seeds = parse_seeds(seeds_arg);
    const std::string hash = data_hash(a.data);
    if (!a.out.empty()) {
        write_manifest(a.out, "ablate", argv, c, hash,
                       {{"table", (fs::path(a.out) / "ablation.md").string()},
                        {"runs", (fs::path(a.out) / "ablation.json").string()}});
    }
    std::cout << "dataset hash: " << hash << "\n";
    dcl::synth::DatasetSplit ds = load_data(a.data, c);
    const auto runs = dcl::ablation::run(ds, c, dcl::ablation::kAllModes, seeds, [](const dcl::ablation::Run& r, const dcl::fusion::Model&) {
        std::printf("%-9s seed %llu  test %.3f  material %.3f\n", dcl::to_string(r.mode).c_str(),
                    static_cast<unsigned long long>(r.seed), r.test.accuracy_all, r.test.accuracy_material);
        std::fflush(stdout);
    });
    const auto summary = dcl::ablation::summarize(runs);
    const std::string table = dcl::ablation::format_table(summary);
    std::cout << "\n" << table;
    if (!a.out.empty()) {
        std::ofstream((fs::path(a.out) / "ablation.md").string()) << table;
        write_json((fs::path(a.out) / "ablation.json").string(), dcl::ablation::to_json(runs, summary));
    }
    return 0;
}

int cmd_embed_viz(const CommonArgs& a, const std::vector<std::string>& argv) {
    if (a.checkpoint.empty()) throw dcl::ConfigError("--checkpoint is required");
    if (a.out.empty()) throw dcl::ConfigError("--out is required");
    auto model = dcl::checkpoint::load(a.checkpoint);
    const fs::path out(a.out);
    const std::string hash = data_hash(a.data);
    write_manifest(a.out, "embed-viz", argv, model->config, hash,
                   {{"plot", (out / "dynamic_tsne.svg").string()}, {"coordinates", (out / "dynamic_tsne.csv").string()}});
    dcl::synth::DatasetSplit ds = load_data(a.data, model->config);
    const auto proj = dcl::embedding::project_dynamic(*model, ds);
    dcl::analysis::write_scatter_svg((out / "dynamic_tsne.svg").string(), proj.xy, proj.motions,
                                     "dynamic factors (test clips) by motion type");
    dcl::analysis::write_coordinates_csv((out / "dynamic_tsne.csv").string(), proj.xy, proj.motions, proj.materials);
    json j = {{"points", proj.xy.rows()},
              {"silhouette_motion", proj.silhouette_motion},
              {"silhouette_shuffled", proj.silhouette_shuffled}};
    write_json((out / "embedding.json").string(), j);
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(const CommonArgs& a, const std::string& fault, const dcl::gradcheck::Options& base,
                  const std::vector<std::string>& argv) {
    dcl::Config c = a.config_path.empty() ? dcl::Config::tiny() : dcl::load_config(a.config_path);
    apply_overrides(c, a.overrides);
    if (!a.mode.empty()) c.mode = dcl::parse_mode(a.mode);
    if (a.seed) c.seed = *a.seed;
    c.validate();
    if (!a.out.empty()) write_manifest(a.out, "gradcheck", argv, c, "", json::object());
    dcl::gradcheck::Options o = base;
    if (!fault.empty()) o.fault_parameter = fault;
    const auto r = dcl::gradcheck::run(c, o);
    std::printf("checked %zu scalars in %.2f s\n", r.checked, r.seconds);
    std::printf("max relative error %.3e at %s[%ld] (analytic %.10e, numeric %.10e)\n", r.max_relative_error,
                r.worst_parameter.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
    if (!r.passed) {
        std::printf("FAIL: exceeds %.0e (worst parameter %s)\n", o.tolerance, r.worst_parameter.c_str());
        return kExitCheckFailed;
    }
    std::printf("OK\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disentangled counterfactual learning on synthetic audiovisual QA"};
    app.require_subcommand(1);
    std::vector<std::string> args(argv, argv + argc);

    CommonArgs a;
    std::string seeds = "1-5";
    std::string split = "test";
    std::string fault;
    dcl::gradcheck::Options gopt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config_path, "JSON config file");
        sub->add_option("--set", a.overrides, "Override a config field, key=value (repeatable)");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate and write a synthetic dataset");
    add_common(gen);
    gen->add_option("--seed", a.seed, "Dataset seed");
    gen->add_option("--out", a.out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train one model");
    add_common(train);
    train->add_option("--data", a.data, "Dataset directory or feature manifest")->required();
    train->add_option("--mode", a.mode, "baseline | dse | dse_a | dse_a_c");
    train->add_option("--seed", a.seed, "Training seed");
    train->add_option("--out", a.out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", a.data, "Dataset directory or feature manifest")->required();
    eval->add_option("--mode", a.mode, "Expected mode (checked against the checkpoint)");
    eval->add_option("--split", split, "train | val | test");
    eval->add_option("--out", a.out, "Directory for eval.json and the run manifest");

    auto* ablate = app.add_subcommand("ablate", "Train every mode over several seeds");
    add_common(ablate);
    ablate->add_option("--data", a.data, "Dataset directory or feature manifest")->required();
    ablate->add_option("--seeds", seeds, "Seed list, e.g. 1-5 or 1,3,9");
    ablate->add_option("--out", a.out, "Output directory");

    auto* viz = app.add_subcommand("embed-viz", "2-D projection of test-clip dynamic factors");
    viz->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    viz->add_option("--data", a.data, "Dataset directory or feature manifest")->required();
    viz->add_option("--out", a.out, "Output directory")->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
    add_common(grad);
    grad->add_option("--mode", a.mode, "Mode to check (default dse_a_c)");
    grad->add_option("--seed", a.seed, "Initialization seed");
    grad->add_option("--fault-parameter", fault, "Negative control: perturb this parameter's analytic gradient");
    grad->add_option("--step", gopt.step, "Central-difference step");
    grad->add_option("--floor", gopt.floor, "Denominator floor of the relative error");
    grad->add_option("--out", a.out, "Directory for the run manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(a, args);
        if (train->parsed()) return cmd_train(a, args);
        if (eval->parsed()) return cmd_eval(a, split, args);
        if (ablate->parsed()) return cmd_ablate(a, seeds, args);
        if (viz->parsed()) return cmd_embed_viz(a, args);
        if (grad->parsed()) return cmd_gradcheck(a, fault, gopt, args);
    } catch (const dcl::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const dcl::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
    return kExitUsage;
}
