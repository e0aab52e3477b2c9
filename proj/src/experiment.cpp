#include "mistake/experiment.hpp"

#include "mistake/util.hpp"

namespace mistake::experiment {

namespace {

std::pair<eval::RunMetrics, eval::RunMetrics> runs_from_kfold(const detector::KfoldResult& kf,
                                                              std::string_view model,
                                                              std::string_view learning) {
  eval::RunMetrics same{std::string(model), "same-image", std::string(learning), kf.same_test,
                        kf.same_last,       kf.same_other, kf.flags};
  eval::RunMetrics diff{std::string(model), "different-image", std::string(learning), kf.diff_test,
                        kf.diff_last,       kf.diff_other,     kf.flags};
  return {std::move(same), std::move(diff)};
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentInput& input, const detector::FeatureStore& store,
                                const qtype::KeywordTable& table, const detector::ModelConfig& proto,
                                const detector::TrainConfig& train) {
  const detector::Vocabulary vocab = detector::Vocabulary::build(input.pretrain_corpus);

  ExperimentOutput out;
  const detector::Architecture archs[] = {detector::Architecture::Baseline,
                                          detector::Architecture::QATurn,
                                          detector::Architecture::QuestionType};
  for (detector::Architecture arch : archs) {
    detector::ModelConfig cfg = proto;
    cfg.architecture = arch;
    detector::DetectorModel init(cfg, vocab, util::hash_mix(train.seed, static_cast<std::uint64_t>(arch)));
    detector::PretrainResult pre = pretrain(init, input.pretrain_corpus, store, table, train);
    detector::KfoldResult kf = finetune_kfold(pre.model, input.finetune_pool, input.same_test,
                                              input.diff_test, store, table, train);
    auto [same, diff] = runs_from_kfold(kf, to_string(arch), "synthetic+human-mistake");
    out.runs.push_back(std::move(same));
    out.runs.push_back(std::move(diff));
  }

  // Ablation: baseline fine-tuned from a fresh initialization, no pretraining.
  {
    detector::ModelConfig cfg = proto;
    cfg.architecture = detector::Architecture::Baseline;
    detector::DetectorModel fresh(cfg, vocab, util::hash_mix(train.seed, 0xab1a));
    detector::KfoldResult kf = finetune_kfold(fresh, input.finetune_pool, input.same_test,
                                              input.diff_test, store, table, train);
    auto [same, diff] = runs_from_kfold(kf, "baseline", "human-mistake");
    out.runs.push_back(std::move(same));
    out.runs.push_back(std::move(diff));
  }

  std::uint64_t config_hash = util::fnv1a64(std::to_string(train.seed) + "/" +
                                            std::to_string(proto.feature_dim) + "/" +
                                            std::to_string(train.k));
  out.report = eval::assemble_report(out.runs, train.seed, util::hex64(config_hash));
  return out;
}

}  // namespace mistake::experiment
