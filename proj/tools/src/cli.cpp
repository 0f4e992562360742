#include "mvil_cli/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mvil/accounting.hpp"
#include "mvil/checkpoint.hpp"
#include "mvil/config.hpp"
#include "mvil/data.hpp"
#include "mvil/errors.hpp"
#include "mvil/gradcheck.hpp"
#include "mvil/train.hpp"

namespace mvil::cli {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

KeyValueConfig load_config(const Globals& g) {
    KeyValueConfig kv = g.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config_path);
    for (const auto& o : g.overrides) kv.apply_override(o);
    if (g.seed) kv.set("seed", std::to_string(*g.seed));
    return kv;
}

fs::path out_dir(const Globals& g, std::string_view command) {
    if (!g.out.empty()) return g.out;
    if (const char* env = std::getenv("MVIL_OUT"); env && *env) return env;
    throw UsageError(fmt::format("{}: an output directory is required (--out or MVIL_OUT)", command));
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContractError(fmt::format("cannot write '{}'", path.string()));
    f << text;
}

// Task-style configs (toy runs) derive the model's data dimensions from the task;
// model-only configs (full-size accounting) give them directly.
ModelSetup setup_from(const KeyValueConfig& kv) {
    if (kv.entries().empty()) return reference_setup(LayerKind::Transformer);
    if (!kv.has("vocab_size") || kv.has("alphabet_size")) return run_config_from(kv).setup;
    ModelSetup s = model_setup_from(kv);
    s.model.validate();
    return s;
}

std::vector<CostTableRow> comparison_rows(const ModelSetup& s) {
    std::vector<CostTableRow> rows;
    for (auto kind : {LayerKind::Transformer, LayerKind::Mlp, LayerKind::MlpTinyAtt}) {
        const ModelConfig m = with_uniform_stack(s.model, kind, s.layers, s.stack);
        rows.push_back({std::string(to_string(kind)), s.layers, analyze(m)});
    }
    return rows;
}

std::string flops_table(const std::vector<CostTableRow>& rows) {
    std::string out = "model\tlayers\tfusion_flops\tfusion_flops_exact\ttotal_flops\ttotal_flops_exact\tvs_first\n";
    const double base = rows.empty() ? 1.0 : static_cast<double>(rows.front().report.fusion_flops());
    for (const auto& r : rows) {
        const auto fusion = r.report.fusion_flops();
        const auto total = r.report.total_flops().total();
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.3f}\n", r.model, r.layers, format_giga(fusion), fusion,
                           format_giga(total), total, base > 0 ? static_cast<double>(fusion) / base : 0.0);
    }
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(fmt::format("--grid: '{}' is not a number", item));
        }
    }
    return grid;
}

std::string eval_line(const EvalMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string("n/a"); };
    return fmt::format("samples={} mlm_acc={} itm_acc={} vqa_acc={}\n", m.samples, opt(m.mlm_accuracy),
                       opt(m.itm_accuracy), opt(m.vqa_accuracy));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"mvil: MLP and attention fusion layers for toy vision-language models", "mvil"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "key = value configuration file");
    app.add_option("--set", g.overrides, "override a config entry, key=value (repeatable)")->allow_extra_args(false);
    app.add_option("--seed", g.seed, "seed for initialization, data and corruption");
    app.add_option("--out", g.out, "output directory (default: $MVIL_OUT)");

    auto* train_cmd = app.add_subcommand("train", "train a model on the synthetic task");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split of the synthetic task");
    std::string eval_checkpoint, eval_split = "val", eval_task = "all";
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_option("--task", eval_task, "mlm, itm, vqa or all")->check(CLI::IsMember({"mlm", "itm", "vqa", "all"}));

    auto* count_cmd = app.add_subcommand("count", "parameter table for Transformer, Mlp and MlpTinyAtt stacks");
    auto* flops_cmd = app.add_subcommand("flops", "FLOP table for Transformer, Mlp and MlpTinyAtt stacks");

    auto* sweep_cmd = app.add_subcommand("sweep", "layer or data scaling sweep");
    std::string sweep_axis = "layers", sweep_grid;
    std::size_t sweep_jobs = 1;
    sweep_cmd->add_option("--axis", sweep_axis, "layers or data")->check(CLI::IsMember({"layers", "data"}));
    sweep_cmd->add_option("--grid", sweep_grid, "comma-separated grid values")->required();
    sweep_cmd->add_option("--jobs", sweep_jobs, "cells trained in parallel")->check(CLI::PositiveNumber);

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::vector<std::string> grad_kinds;
    std::size_t grad_seeds = 20;
    double grad_tolerance = 1e-4;
    grad_cmd->add_option("--kind", grad_kinds, "target to check (repeatable; default: all)");
    grad_cmd->add_option("--seeds", grad_seeds, "random draws per target")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--tolerance", grad_tolerance, "largest accepted relative error");
    bool grad_list = false;
    grad_cmd->add_flag("--list", grad_list, "print the available targets");

    auto* mix_cmd = app.add_subcommand("export-mixing", "write P*Q of position-FFN layers as CSV");
    std::string mix_checkpoint;
    std::vector<std::size_t> mix_layers;
    mix_cmd->add_option("--checkpoint", mix_checkpoint, "checkpoint file (default: fresh model from the config)");
    mix_cmd->add_option("--layers", mix_layers, "fusion layer indices (default: every position-FFN layer)")
        ->delimiter(',');

    auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset as CSV");

    if (args.empty()) {
        out << app.help();
        return kExitUsage;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*train_cmd) {
            const auto run = run_config_from(load_config(g));
            const auto dir = out_dir(g, "train");
            const auto result = train(run, dir);
            if (!result.metrics.empty()) {
                const auto& last = result.metrics.back();
                out << fmt::format("step={} mlm={:.6f} itm={:.6f} vqa={:.6f} total={:.6f} itm_acc={:.3f}\n", last.step,
                                   last.mlm_loss, last.itm_loss, last.vqa_loss, last.total_loss, last.itm_accuracy);
            }
            out << fmt::format("wrote {}\n", (dir / "checkpoint.mvil").string());
        } else if (*eval_cmd) {
            const auto run = run_config_from(load_config(g));
            const Model model = model_from_checkpoint(load_checkpoint(eval_checkpoint));
            const Dataset data = generate_dataset(run.task, run.seed);
            const auto& split = eval_split == "train" ? data.train : eval_split == "val" ? data.val : data.test;
            out << eval_line(evaluate(model, split, run.task, parse_eval_task(eval_task), run.seed));
        } else if (*count_cmd || *flops_cmd) {
            const auto rows = comparison_rows(setup_from(load_config(g)));
            const bool count = count_cmd->parsed();
            const std::string table = count ? emit_cost_table(rows) : flops_table(rows);
            out << table;
            if (!g.out.empty() || std::getenv("MVIL_OUT")) {
                write_file(out_dir(g, "count") / (count ? "cost_table.tsv" : "flops_table.tsv"), table);
            }
        } else if (*sweep_cmd) {
            const auto run = run_config_from(load_config(g));
            const auto dir = out_dir(g, "sweep");
            const auto grid = parse_grid(sweep_grid);
            const auto axis = sweep_axis == "layers" ? SweepAxis::Layers : SweepAxis::Data;
            const auto rows = run_scaling_sweep(axis, grid, run, dir, sweep_jobs);
            std::size_t failed = 0;
            for (const auto& r : rows) failed += r.status != "ok";
            out << fmt::format("{} runs, {} failed; wrote {}\n", rows.size(), failed, (dir / "sweep.csv").string());
        } else if (*grad_cmd) {
            if (grad_list) {
                for (const auto& t : gradcheck_targets()) out << t << '\n';
                return kExitOk;
            }
            const auto seed = g.seed.value_or(0);
            const auto targets = grad_kinds.empty() ? gradcheck_targets() : grad_kinds;
            bool ok = true;
            for (const auto& t : targets) {
                const auto r = run_gradcheck(t, grad_seeds, seed);
                const bool pass = r.max_relative_error < grad_tolerance;
                ok = ok && pass;
                out << fmt::format("{}\t{}\tmax_rel_err={:.3e}\tchecks={}\tworst={}\n", pass ? "PASS" : "FAIL", t,
                                   r.max_relative_error, r.checks, r.worst);
            }
            return ok ? kExitOk : kExitError;
        } else if (*mix_cmd) {
            const auto dir = out_dir(g, "export-mixing");
            std::optional<Model> model;
            if (!mix_checkpoint.empty()) {
                model.emplace(model_from_checkpoint(load_checkpoint(mix_checkpoint)));
            } else {
                const auto kv = load_config(g);
                Rng rng = Rng::derive(kv.get_u64("seed", 0), 1);
                model.emplace(setup_from(kv).model, rng);
            }
            const auto& layers = model->config().fusion_layers;
            std::vector<std::size_t> chosen = mix_layers;
            if (chosen.empty()) {
                for (std::size_t i = 0; i < layers.size(); ++i)
                    if (has_position_ffn(layers[i].kind)) chosen.push_back(i);
                if (chosen.empty()) throw UnsupportedLayerError("export-mixing: no fusion layer has a position FFN");
            }
            for (auto i : chosen) {
                if (i >= layers.size()) {
                    throw ContractError(fmt::format("export-mixing: layer {} out of range ({} layers)", i, layers.size()));
                }
                const Tensor pq = mixing_matrix(layers[i], model->fusion_params()[i]);
                std::string csv;
                for (std::size_t r = 0; r < pq.rows(); ++r) {
                    for (std::size_t c = 0; c < pq.cols(); ++c) {
                        if (c) csv += ',';
                        csv += fmt::format("{:.17g}", pq.at(r, c));
                    }
                    csv += '\n';
                }
                const auto path = dir / fmt::format("mixing_layer{}.csv", i);
                write_file(path, csv);
                out << fmt::format("wrote {}\n", path.string());
            }
        } else if (*gen_cmd) {
            const auto run = run_config_from(load_config(g));
            const auto path = out_dir(g, "gen-data") / "dataset.csv";
            write_file(path, dataset_to_csv(generate_dataset(run.task, run.seed)));
            out << fmt::format("wrote {}\n", path.string());
        }
        return kExitOk;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

}  // namespace mvil::cli
