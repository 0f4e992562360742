#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvil/config.hpp"
#include "mvil/data.hpp"
#include "mvil/model.hpp"
#include "mvil/objectives.hpp"
#include "mvil/optim.hpp"

namespace mvil {

struct RunConfig {
    ModelSetup setup;
    SyntheticTaskSpec task;

    AdamWHyper fusion_optimizer{.lr = 5e-5};
    AdamWHyper encoder_optimizer{.lr = 1e-5};
    std::size_t batch_size = 8;
    std::size_t steps = 100;
    std::uint64_t seed = 0;

    double mlm_weight = 1.0;
    double itm_weight = 1.0;
    double vqa_weight = 1.0;
    double mlm_rate = 0.15;
    double itm_probability = 0.5;

    std::size_t checkpoint_every = 0;  // 0 writes only the final checkpoint
    bool fixed_batch = false;          // train on one pinned batch with pinned corruption
    double data_fraction = 1.0;

    const ModelConfig& model() const { return setup.model; }
    void validate() const;
};

/// Builds a run from key-value settings. Task keys (alphabet_size, grid_rows,
/// grid_cols, train_size, ...) determine the model's vocabulary, answer count,
/// patch width and text length; explicit model values must agree with them.
/// ConfigError for unknown keys or inconsistent values.
RunConfig run_config_from(const KeyValueConfig& kv);

struct StepMetrics {
    std::size_t step = 0;
    double mlm_loss = 0.0;
    double itm_loss = 0.0;
    double vqa_loss = 0.0;
    double total_loss = 0.0;
    double itm_accuracy = 0.0;
};

/// Weighted objective losses for one batch, averaged over its samples.
struct BatchLosses {
    Tensor mlm;
    Tensor itm;
    Tensor vqa;
    Tensor total;
    std::size_t itm_correct = 0;
};

struct CorruptedBatch {
    std::vector<const Sample*> samples;
    ItmBatch itm;
    MlmBatch mlm;
};

CorruptedBatch corrupt_batch(std::span<const Sample* const> samples, const RunConfig& run, Rng& rng);
BatchLosses batch_losses(const Model& model, const CorruptedBatch& batch, const RunConfig& run);

struct TrainResult {
    std::vector<StepMetrics> metrics;
    std::optional<Model> model;
    std::uint64_t steps = 0;
    std::string rng_state;
};

/// Per step: ITM corruption, MLM masking, forward, weighted loss sum, backward,
/// AdamW (fusion and encoder groups). When `out_dir` is set, writes metrics.csv and
/// checkpoint.mvil there, plus checkpoint_step<N>.mvil every checkpoint_every steps.
/// NumericError naming the step and the loss component on a non-finite loss.
TrainResult train(const RunConfig& run, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

std::string metrics_csv(std::span<const StepMetrics> metrics);

enum class EvalTask { Mlm, Itm, Vqa, All };
EvalTask parse_eval_task(std::string_view text);

struct EvalMetrics {
    std::size_t samples = 0;
    std::optional<double> mlm_accuracy;
    std::optional<double> itm_accuracy;
    std::optional<double> vqa_accuracy;
};

/// Argmax accuracies (lowest index on ties). ITM pairs are corrupted with p = 0.5 and
/// MLM masks drawn at 0.15, both from `seed`. ContractError when the model's data
/// dimensions do not fit the task.
EvalMetrics evaluate(const Model& model, std::span<const Sample> split, const SyntheticTaskSpec& task, EvalTask which,
                     std::uint64_t seed);

enum class SweepAxis { Layers, Data };

struct SweepRow {
    LayerKind kind = LayerKind::Mlp;
    double value = 0.0;
    std::size_t layers = 0;
    double data_fraction = 1.0;
    std::size_t train_size = 0;
    std::uint64_t fusion_params = 0;
    std::uint64_t total_params = 0;
    std::uint64_t fusion_flops = 0;
    std::uint64_t total_flops = 0;
    StepMetrics final_metrics;
    EvalMetrics eval;
    std::string status = "ok";
};

/// One training run per (kind, grid value) for kinds Transformer, Mlp, MlpTinyAtt.
/// The layers axis sets the stack depth; the data axis keeps floor(fraction * N)
/// training samples. A failing cell is recorded with status "failed: ..." and the
/// sweep continues. Cells run on up to `jobs` threads, each with its own seed and
/// output subdirectory.
std::vector<SweepRow> run_scaling_sweep(SweepAxis axis, std::span<const double> grid, const RunConfig& base,
                                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                        std::size_t jobs = 1);

std::string sweep_csv(SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace mvil
