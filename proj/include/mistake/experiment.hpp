#pragma once

#include <span>
#include <string>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/detector.hpp"
#include "mistake/eval.hpp"
#include "mistake/qtype.hpp"

namespace mistake::experiment {

struct ExperimentInput {
  std::span<const corpus::GameRecord> pretrain_corpus;  // synthetic, machine-labeled
  std::span<const corpus::GameRecord> finetune_pool;    // same-image fine-tune pool
  std::span<const corpus::GameRecord> same_test;
  std::span<const corpus::GameRecord> diff_test;
};

struct ExperimentOutput {
  std::vector<eval::RunMetrics> runs;
  std::string report;  // assembled table grids
};

/// Full protocol: for each architecture, pretrain on the synthetic corpus and
/// k-fold fine-tune on the pool, evaluating fold models on both test sets;
/// plus the baseline-without-pretraining ablation row. `proto` supplies the
/// dimensions; the architecture field is overridden per run.
ExperimentOutput run_experiment(const ExperimentInput& input, const detector::FeatureStore& store,
                                const qtype::KeywordTable& table, const detector::ModelConfig& proto,
                                const detector::TrainConfig& train);

}  // namespace mistake::experiment
