#include "mistake/eval.hpp"

#include <sstream>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::eval {

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

Confusion confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("confusion: predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred = predictions[i] != 0;
    const bool pos = labels[i] != 0;
    if (pred && pos)
      ++c.tp;
    else if (pred && !pos)
      ++c.fp;
    else if (!pred && pos)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double precision(const Confusion& c) {
  const std::uint64_t d = c.tp + c.fp;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double recall(const Confusion& c) {
  const std::uint64_t d = c.tp + c.fn;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double f_score(const Confusion& c) {
  const double p = precision(c);
  const double r = recall(c);
  return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double accuracy(const Confusion& c) {
  const std::uint64_t n = c.total();
  return n == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}

std::pair<Confusion, Confusion> slice_last_turn(
    std::span<const int> predictions, std::span<const int> labels,
    std::span<const std::pair<std::size_t, std::size_t>> turns) {
  if (predictions.size() != labels.size() || predictions.size() != turns.size())
    throw std::invalid_argument("slice_last_turn: input lengths differ");
  std::pair<Confusion, Confusion> out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    Confusion single = confusion(predictions.subspan(i, 1), labels.subspan(i, 1));
    if (turns[i].first == turns[i].second)
      out.first += single;
    else
      out.second += single;
  }
  return out;
}

namespace {

std::string metrics_line(const Confusion& c) {
  std::ostringstream s;
  s << "f=" << util::format_fixed(f_score(c), 6) << " recall=" << util::format_fixed(recall(c), 6)
    << " precision=" << util::format_fixed(precision(c), 6) << " tp=" << c.tp << " fp=" << c.fp
    << " fn=" << c.fn << " tn=" << c.tn;
  return s.str();
}

const RunMetrics* find_run(std::span<const RunMetrics> runs, std::string_view model,
                           std::string_view dataset, std::string_view learning) {
  for (const auto& r : runs) {
    if (r.model == model && r.dataset == dataset && r.learning == learning) return &r;
  }
  return nullptr;
}

void emit_cell(std::ostringstream& out, const std::string& key, const RunMetrics* run) {
  if (!run) {
    out << key << " = missing\n";
    return;
  }
  out << key << " = " << metrics_line(run->overall) << "\n";
  for (const auto& f : run->flags) out << key << ".flag = " << f << "\n";
}

}  // namespace

std::string assemble_report(std::span<const RunMetrics> runs, std::uint64_t seed,
                            std::string_view config_hash) {
  static const char* kDatasets[] = {"same-image", "different-image"};
  static const char* kModels[] = {"baseline", "qa-turn", "question-type"};
  constexpr std::string_view kPretrained = "synthetic+human-mistake";

  std::ostringstream out;
  out << "schema = mistake-report/1\n";
  out << "seed = " << seed << "\n";
  out << "config_hash = " << config_hash << "\n";
  out << "\n[architecture-by-dataset]\n";
  for (const char* model : kModels) {
    for (const char* ds : kDatasets) {
      emit_cell(out, std::string(model) + "/" + ds, find_run(runs, model, ds, kPretrained));
    }
  }
  out << "\n[turn-slices]\n";
  for (const char* model : {"baseline", "qa-turn"}) {
    for (const char* ds : kDatasets) {
      const RunMetrics* run = find_run(runs, model, ds, kPretrained);
      for (const char* slice : {"last-turn", "other-turns"}) {
        std::string key = std::string(model) + "/" + ds + "/" + slice;
        const std::optional<Confusion>* c = nullptr;
        if (run) c = std::string_view(slice) == "last-turn" ? &run->last_turn : &run->other_turns;
        if (!run || !c->has_value())
          out << key << " = missing\n";
        else
          out << key << " = " << metrics_line(c->value()) << "\n";
      }
    }
  }
  out << "\n[learning-method]\n";
  for (const char* learning : {"human-mistake", "synthetic+human-mistake"}) {
    for (const char* ds : kDatasets) {
      emit_cell(out, std::string(learning) + "/" + ds, find_run(runs, "baseline", ds, learning));
    }
  }
  return out.str();
}

}  // namespace mistake::eval
