#include "mvil/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "mvil/accounting.hpp"
#include "mvil/checkpoint.hpp"
#include "mvil/errors.hpp"

namespace mvil {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // model
        "d", "vocab_size", "answer_vocab_size", "text_len", "grid_rows", "grid_cols", "patch_dim", "vision_encoder",
        "vision_blocks", "vision_h", "vision_h_pos", "pooling", "position_embeddings", "vqa_hidden", "nlvr2_hidden",
        "task_heads", "h", "h_pos", "attention_heads", "k", "k_tiny", "norm", "norm_eps", "fusion_kind", "layers",
        "fusion", "fusion.count",
        // task
        "alphabet_size", "train_size", "val_size", "test_size",
        // run
        "fusion_lr", "encoder_lr", "beta1", "beta2", "adam_eps", "weight_decay", "batch_size", "steps", "seed",
        "mlm_weight", "itm_weight", "vqa_weight", "mlm_rate", "itm_probability", "checkpoint_every", "fixed_batch",
        "data_fraction"};
    return keys;
}

void check_known(const KeyValueConfig& kv) {
    for (const auto& [key, value] : kv.entries()) {
        if (known_keys().contains(key)) continue;
        if (key.starts_with("fusion.") && key != "fusion.count") continue;
        throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
}

void default_or_check(KeyValueConfig& kv, const std::string& key, std::size_t derived) {
    if (!kv.has(key)) {
        kv.set(key, std::to_string(derived));
        return;
    }
    const auto given = kv.get_size(key, 0);
    if (given != derived) {
        throw ConfigError(fmt::format("config key '{}' = {} is inconsistent with the synthetic task, which needs {}", key,
                                      given, derived));
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError(fmt::format("cannot write '{}'", path.string()));
    out << text;
}

void check_task_fit(const ModelConfig& m, const SyntheticTaskSpec& t) {
    if (m.vocab_size != t.vocab_size() || m.text_len != t.text_len() || m.patch_dim != t.patch_dim() ||
        m.grid_rows != t.grid_rows || m.grid_cols != t.grid_cols ||
        (m.heads.vqa && m.answer_vocab_size != t.answer_vocab_size())) {
        throw ContractError(fmt::format(
            "model (vocab {}, text_len {}, patch_dim {}, grid {}x{}, answers {}) does not fit the task "
            "(vocab {}, text_len {}, patch_dim {}, grid {}x{}, answers {})",
            m.vocab_size, m.text_len, m.patch_dim, m.grid_rows, m.grid_cols, m.answer_vocab_size, t.vocab_size(),
            t.text_len(), t.patch_dim(), t.grid_rows, t.grid_cols, t.answer_vocab_size()));
    }
}

// MLM labels over the full fused sequence: only text rows can carry a label.
std::vector<int> sequence_labels(const ModelConfig& m, const std::vector<int>& text_labels) {
    std::vector<int> labels(m.seq_len(), kIgnoreLabel);
    std::copy(text_labels.begin(), text_labels.end(), labels.begin() + 1);
    return labels;
}

std::vector<double> one_hot(std::size_t size, int index) {
    std::vector<double> v(size, 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return v;
}

}  // namespace

void RunConfig::validate() const {
    task.validate();
    setup.model.validate();
    check_task_fit(setup.model, task);
    fusion_optimizer.validate();
    encoder_optimizer.validate();
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (ITM needs a different text in the batch)");
    const auto usable = downsampled_size(task.train_size, data_fraction);
    if (usable < batch_size) {
        throw ConfigError(fmt::format("training split of {} samples is smaller than batch_size {}", usable, batch_size));
    }
    if (!(mlm_rate > 0.0 && mlm_rate <= 1.0)) throw ConfigError("mlm_rate must lie in (0, 1]");
    if (!(itm_probability >= 0.0 && itm_probability <= 1.0)) throw ConfigError("itm_probability must lie in [0, 1]");
}

RunConfig run_config_from(const KeyValueConfig& input) {
    check_known(input);
    RunConfig run;
    auto& t = run.task;
    t.alphabet_size = input.get_size("alphabet_size", 4);
    t.grid_rows = input.get_size("grid_rows", 2);
    t.grid_cols = input.get_size("grid_cols", 2);
    t.train_size = input.get_size("train_size", 64);
    t.val_size = input.get_size("val_size", 32);
    t.test_size = input.get_size("test_size", 32);
    t.validate();

    KeyValueConfig kv = input;
    default_or_check(kv, "grid_rows", t.grid_rows);
    default_or_check(kv, "grid_cols", t.grid_cols);
    default_or_check(kv, "vocab_size", t.vocab_size());
    default_or_check(kv, "answer_vocab_size", t.answer_vocab_size());
    default_or_check(kv, "patch_dim", t.patch_dim());
    default_or_check(kv, "text_len", t.text_len());
    run.setup = model_setup_from(kv);

    run.fusion_optimizer.lr = kv.get_double("fusion_lr", 5e-5);
    run.encoder_optimizer.lr = kv.get_double("encoder_lr", 1e-5);
    for (auto* opt : {&run.fusion_optimizer, &run.encoder_optimizer}) {
        opt->beta1 = kv.get_double("beta1", 0.9);
        opt->beta2 = kv.get_double("beta2", 0.999);
        opt->eps = kv.get_double("adam_eps", 1e-8);
        opt->weight_decay = kv.get_double("weight_decay", 0.01);
    }
    run.batch_size = kv.get_size("batch_size", 8);
    run.steps = kv.get_size("steps", 100);
    run.seed = kv.get_u64("seed", 0);
    run.mlm_weight = kv.get_double("mlm_weight", 1.0);
    run.itm_weight = kv.get_double("itm_weight", 1.0);
    run.vqa_weight = kv.get_double("vqa_weight", 1.0);
    run.mlm_rate = kv.get_double("mlm_rate", 0.15);
    run.itm_probability = kv.get_double("itm_probability", 0.5);
    run.checkpoint_every = kv.get_size("checkpoint_every", 0);
    run.fixed_batch = kv.get_bool("fixed_batch", false);
    run.data_fraction = kv.get_double("data_fraction", 1.0);
    run.validate();
    return run;
}

CorruptedBatch corrupt_batch(std::span<const Sample* const> samples, const RunConfig& run, Rng& rng) {
    CorruptedBatch batch;
    batch.samples.assign(samples.begin(), samples.end());
    batch.itm = apply_itm_corruption(samples.size(), run.itm_probability, rng);
    std::vector<std::vector<int>> texts;
    texts.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) texts.push_back(samples[batch.itm.text_source[i]]->tokens);
    batch.mlm = apply_mlm_mask(texts, run.mlm_rate, rng);
    return batch;
}

BatchLosses batch_losses(const Model& model, const CorruptedBatch& batch, const RunConfig& run) {
    const auto& m = model.config();
    const std::size_t count = batch.samples.size();
    std::vector<Tensor> mlm_terms, itm_terms, vqa_terms;
    BatchLosses out;
    for (std::size_t i = 0; i < count; ++i) {
        const Sample& image = *batch.samples[i];
        const Sample& text = *batch.samples[batch.itm.text_source[i]];
        const auto result = model.forward(batch.mlm.tokens[i], image.patches(run.task.alphabet_size));
        if (m.heads.mlm) {
            const auto labels = sequence_labels(m, batch.mlm.labels[i]);
            mlm_terms.push_back(mlm_loss(model.mlm_head(result.hidden), labels));
        }
        if (m.heads.itm) {
            const Tensor logits = model.itm_head(result.pooled);
            itm_terms.push_back(itm_loss(logits, batch.itm.labels[i]));
            if (static_cast<int>(argmax(logits.values())) == batch.itm.labels[i]) ++out.itm_correct;
        }
        if (m.heads.vqa) {
            // The question travels with the text, so the target follows the swapped-in question.
            const int answer = vqa_answer(text.question, image.grid);
            const auto target = one_hot(m.answer_vocab_size, answer);
            vqa_terms.push_back(vqa_loss(model.vqa_head(result.pooled), target));
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    auto average = [inv](const std::vector<Tensor>& terms) {
        if (terms.empty()) return Tensor::scalar(0.0);
        Tensor acc = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
        return scale(acc, inv);
    };
    out.mlm = average(mlm_terms);
    out.itm = average(itm_terms);
    out.vqa = average(vqa_terms);
    out.total = add(add(scale(out.mlm, run.mlm_weight), scale(out.itm, run.itm_weight)), scale(out.vqa, run.vqa_weight));
    return out;
}

std::string metrics_csv(std::span<const StepMetrics> metrics) {
    std::string out = "step,mlm_loss,itm_loss,vqa_loss,total_loss,itm_acc\n";
    for (const auto& s : metrics) {
        out += fmt::format("{},{:.9e},{:.9e},{:.9e},{:.9e},{:.6f}\n", s.step, s.mlm_loss, s.itm_loss, s.vqa_loss,
                           s.total_loss, s.itm_accuracy);
    }
    return out;
}

TrainResult train(const RunConfig& run, const std::optional<std::filesystem::path>& out_dir) {
    run.validate();
    const Dataset data = generate_dataset(run.task, run.seed);
    const std::size_t usable = downsampled_size(data.train.size(), run.data_fraction);
    std::vector<const Sample*> pool;
    for (std::size_t i = 0; i < usable; ++i) pool.push_back(&data.train[i]);

    Rng init_rng = Rng::derive(run.seed, 1);
    Rng rng = Rng::derive(run.seed, 2);
    TrainResult result;
    result.model.emplace(run.model(), init_rng);
    Model& model = *result.model;

    std::vector<AdamW::Group> groups(2);
    groups[0].hyper = run.fusion_optimizer;
    groups[1].hyper = run.encoder_optimizer;
    for (const auto& [name, t] : model.parameters()) groups[Model::is_encoder_parameter(name) ? 1 : 0].params.push_back(t);
    AdamW optimizer(std::move(groups));

    if (out_dir) std::filesystem::create_directories(*out_dir);

    // Epoch-shuffled batches; with fixed_batch the first batch and its corruption are pinned.
    std::vector<std::size_t> order(pool.size());
    std::size_t cursor = order.size();
    auto next_batch = [&] {
        std::vector<const Sample*> batch;
        while (batch.size() < run.batch_size) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            batch.push_back(pool[order[cursor++]]);
        }
        return batch;
    };
    std::optional<CorruptedBatch> pinned;
    if (run.fixed_batch) {
        std::vector<const Sample*> first(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(run.batch_size));
        pinned = corrupt_batch(first, run, rng);
    }

    for (std::size_t step = 1; step <= run.steps; ++step) {
        CorruptedBatch batch = pinned ? *pinned : corrupt_batch(next_batch(), run, rng);
        // Diverged parameters can turn the forward pass itself non-finite.
        BatchLosses losses;
        try {
            losses = batch_losses(model, batch, run);
        } catch (const NumericError& e) {
            throw NumericError(fmt::format("training aborted at step {}: loss forward failed: {}", step, e.what()));
        }
        StepMetrics metrics{step, losses.mlm.item(), losses.itm.item(), losses.vqa.item(), losses.total.item(),
                            static_cast<double>(losses.itm_correct) / static_cast<double>(batch.samples.size())};
        for (auto [name, value] : {std::pair{"mlm", metrics.mlm_loss}, {"itm", metrics.itm_loss}, {"vqa", metrics.vqa_loss}}) {
            if (!std::isfinite(value)) {
                throw NumericError(fmt::format("training aborted at step {}: {} loss is {}", step, name, value));
            }
        }
        backward(losses.total);
        optimizer.step();
        optimizer.zero_grad();
        result.metrics.push_back(metrics);
        if (out_dir && run.checkpoint_every && step % run.checkpoint_every == 0 && step != run.steps) {
            save_checkpoint(*out_dir / fmt::format("checkpoint_step{}.mvil", step), make_checkpoint(model, step, rng.state()));
        }
    }
    result.steps = run.steps;
    result.rng_state = rng.state();
    if (out_dir) {
        write_text(*out_dir / "metrics.csv", metrics_csv(result.metrics));
        save_checkpoint(*out_dir / "checkpoint.mvil", make_checkpoint(model, result.steps, result.rng_state));
    }
    return result;
}

EvalTask parse_eval_task(std::string_view text) {
    if (text == "mlm") return EvalTask::Mlm;
    if (text == "itm") return EvalTask::Itm;
    if (text == "vqa") return EvalTask::Vqa;
    if (text == "all") return EvalTask::All;
    throw ConfigError(fmt::format("unknown evaluation task '{}'", text));
}

EvalMetrics evaluate(const Model& model, std::span<const Sample> split, const SyntheticTaskSpec& task, EvalTask which,
                     std::uint64_t seed) {
    const auto& m = model.config();
    check_task_fit(m, task);
    if (split.empty()) throw ContractError("evaluate: empty split");
    EvalMetrics metrics;
    metrics.samples = split.size();
    Rng rng = Rng::derive(seed, 3);
    const bool all = which == EvalTask::All;

    if ((all || which == EvalTask::Itm) && m.heads.itm) {
        const auto itm = apply_itm_corruption(split.size(), 0.5, rng);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < split.size(); ++i) {
            const auto out = model.forward(split[itm.text_source[i]].tokens, split[i].patches(task.alphabet_size));
            if (static_cast<int>(argmax(model.itm_head(out.pooled).values())) == itm.labels[i]) ++correct;
        }
        metrics.itm_accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    }
    if ((all || which == EvalTask::Vqa) && m.heads.vqa) {
        std::size_t correct = 0;
        for (const auto& s : split) {
            const auto out = model.forward(s.tokens, s.patches(task.alphabet_size));
            if (static_cast<int>(argmax(model.vqa_head(out.pooled).values())) == s.answer) ++correct;
        }
        metrics.vqa_accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    }
    if ((all || which == EvalTask::Mlm) && m.heads.mlm) {
        std::vector<std::vector<int>> texts;
        for (const auto& s : split) texts.push_back(s.tokens);
        const auto mlm = apply_mlm_mask(texts, 0.15, rng);
        std::size_t correct = 0, total = 0;
        for (std::size_t i = 0; i < split.size(); ++i) {
            const auto out = model.forward(mlm.tokens[i], split[i].patches(task.alphabet_size));
            const Tensor logits = model.mlm_head(out.hidden);
            const auto& labels = mlm.labels[i];
            for (std::size_t j = 0; j < labels.size(); ++j) {
                if (labels[j] == kIgnoreLabel) continue;
                const auto row = logits.values().subspan((1 + j) * m.vocab_size, m.vocab_size);
                correct += static_cast<int>(argmax(row)) == labels[j];
                ++total;
            }
        }
        metrics.mlm_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    }
    return metrics;
}

std::vector<SweepRow> run_scaling_sweep(SweepAxis axis, std::span<const double> grid, const RunConfig& base,
                                        const std::optional<std::filesystem::path>& out_dir, std::size_t jobs) {
    const LayerKind kinds[] = {LayerKind::Transformer, LayerKind::Mlp, LayerKind::MlpTinyAtt};
    struct Cell {
        LayerKind kind;
        double value;
    };
    std::vector<Cell> cells;
    for (auto kind : kinds)
        for (double v : grid) cells.push_back({kind, v});

    std::vector<SweepRow> rows(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const auto& cell = cells[i];
            SweepRow& row = rows[i];
            row.kind = cell.kind;
            row.value = cell.value;
            try {
                RunConfig run = base;
                run.seed = splitmix64(base.seed ^ (0x5eedULL + i));
                std::size_t layers = base.setup.layers;
                if (axis == SweepAxis::Layers) {
                    if (!(cell.value >= 0.0) || cell.value != std::floor(cell.value)) {
                        throw ConfigError(fmt::format("layer count {} is not a non-negative integer", cell.value));
                    }
                    layers = static_cast<std::size_t>(cell.value);
                } else {
                    run.data_fraction = cell.value;
                }
                run.setup.kind = cell.kind;
                run.setup.layers = layers;
                run.setup.model = with_uniform_stack(base.setup.model, cell.kind, layers, base.setup.stack);
                row.layers = layers;
                row.data_fraction = run.data_fraction;
                row.train_size = downsampled_size(run.task.train_size, run.data_fraction);
                const CostReport cost = analyze(run.model());
                row.fusion_params = cost.fusion_params();
                row.total_params = cost.total_params().total();
                row.fusion_flops = cost.fusion_flops();
                row.total_flops = cost.total_flops().total();

                std::optional<std::filesystem::path> cell_dir;
                if (out_dir) cell_dir = *out_dir / fmt::format("{}_{}", to_string(cell.kind), cell.value);
                const TrainResult result = train(run, cell_dir);
                if (!result.metrics.empty()) row.final_metrics = result.metrics.back();
                const Dataset data = generate_dataset(run.task, run.seed);
                if (!data.val.empty()) row.eval = evaluate(*result.model, data.val, run.task, EvalTask::All, run.seed);
            } catch (const std::exception& e) {
                row.status = fmt::format("failed: {}", e.what());
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        write_text(*out_dir / "sweep.csv", sweep_csv(axis, rows));
    }
    return rows;
}

std::string sweep_csv(SweepAxis axis, std::span<const SweepRow> rows) {
    std::string out =
        "kind,axis,value,layers,data_fraction,train_size,fusion_params,total_params,fusion_flops,total_flops,"
        "mlm_loss,itm_loss,vqa_loss,total_loss,itm_acc,vqa_acc,mlm_acc,status\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string(); };
    for (const auto& r : rows) {
        const bool ok = r.status == "ok";
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},", to_string(r.kind), axis == SweepAxis::Layers ? "layers" : "data",
                           r.value, r.layers, r.data_fraction, r.train_size, r.fusion_params, r.total_params,
                           r.fusion_flops, r.total_flops);
        if (ok) {
            const auto& f = r.final_metrics;
            out += fmt::format("{:.9e},{:.9e},{:.9e},{:.9e},{},{},{},{}\n", f.mlm_loss, f.itm_loss, f.vqa_loss,
                               f.total_loss, opt(r.eval.itm_accuracy), opt(r.eval.vqa_accuracy), opt(r.eval.mlm_accuracy),
                               status);
        } else {
            out += fmt::format(",,,,,,,{}\n", status);
        }
    }
    return out;
}

}  // namespace mvil
