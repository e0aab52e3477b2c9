#include "mistake/prompts.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::prompts {

using json = nlohmann::ordered_json;

std::string to_string(PromptType t) {
  std::string s;
  switch (t.kind) {
    case PromptKind::Normal: s = "normal"; break;
    case PromptKind::QTypeHint: s = "qtype-hint"; break;
    case PromptKind::TimeHint: s = "time-hint"; break;
  }
  return s + (t.with_history ? "+history" : "");
}

std::string format_turn(double turn) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", turn);
  std::string s = buf;
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

namespace {

std::string answer_text(corpus::Answer a) {
  switch (a) {
    case corpus::Answer::Yes: return "yes";
    case corpus::Answer::No: return "no";
    case corpus::Answer::NA: return "n/a";
  }
  return "n/a";
}

std::string qtype_token(qtype::QuestionType t) { return "<" + std::string(qtype::to_string(t)) + ">"; }

std::string history_text(const std::vector<corpus::QAPair>& history) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0) out += "; ";
    out += "Q: " + history[i].question + " A: " + answer_text(history[i].answer);
  }
  return out;
}

[[noreturn]] void missing(const char* field) {
  throw std::invalid_argument(std::string("build_prompt: missing required field `") + field + "`");
}

}  // namespace

std::string build_prompt(const PromptExample& ex, PromptType type, bool as_context) {
  if (ex.category_name.empty()) missing("category_name");
  if (ex.question.empty()) missing("question");
  if (type.with_history && ex.history.empty()) missing("history");
  if (type.kind == PromptKind::QTypeHint && !ex.question_type) missing("question_type");
  if (type.kind == PromptKind::TimeHint && !ex.normalized_turn) missing("normalized_turn");
  if (as_context && !ex.gold_mistake) missing("gold_mistake");

  std::string out;
  out += "<BOS> <image>\n";
  out += "The target object: {position: a yellow rectangle, name: " + ex.category_name + "},\n";
  if (type.with_history) out += "Dialogue history: " + history_text(ex.history) + ",\n";
  if (type.kind == PromptKind::TimeHint)
    out += "Question at " + format_turn(*ex.normalized_turn) + " progression of dialogue: " + ex.question +
           ",\n";
  else
    out += "Question: " + ex.question + ",\n";
  out += "Answer: " + answer_text(ex.answer) + ",\n";
  if (type.kind == PromptKind::QTypeHint) {
    out += "This question type: " + qtype_token(*ex.question_type) + "\n";
    out += "Hint: <spatial>, <color>, <action>, and <size> questions are easy to make mistakes on.\n";
  } else if (type.kind == PromptKind::TimeHint) {
    out += "Hint: The frequency of answer errors increases as answer time is bigger.\n";
  }
  out += "Judge: Is this answer a mistake?\n";
  if (as_context)
    out += "Output: " + std::string(*ex.gold_mistake ? "yes" : "no") + ".<EOC>";
  else
    out += "Output:";
  return out;
}

std::string assemble_fewshot(std::span<const PromptExample> context, const PromptExample& query,
                             PromptType type) {
  if (context.size() != 8)
    throw std::invalid_argument("assemble_fewshot: exactly 8 context examples required, got " +
                                std::to_string(context.size()));
  std::string out;
  for (const auto& ex : context) {
    out += build_prompt(ex, type, /*as_context=*/true);
    out += "\n";
  }
  out += build_prompt(query, type, /*as_context=*/false);
  return out;
}

Judgment parse_vlm_output(std::string_view text) {
  const auto line_end = text.find('\n');
  const std::vector<std::string> tokens =
      qtype::normalize_question(text.substr(0, line_end == std::string_view::npos ? text.size() : line_end));

  auto has_seq = [&](std::initializer_list<const char*> seq) {
    if (tokens.size() < seq.size()) return false;
    for (std::size_t i = 0; i + seq.size() <= tokens.size(); ++i) {
      std::size_t j = 0;
      for (const char* w : seq) {
        if (tokens[i + j] != w) break;
        ++j;
      }
      if (j == seq.size()) return true;
    }
    return false;
  };

  // Longest match first, so "not a mistake" wins over "mistake" and "no".
  if (has_seq({"not", "a", "mistake"})) return Judgment::Correct;
  if (has_seq({"mistake"})) return Judgment::Mistake;
  if (has_seq({"yes"})) return Judgment::Mistake;
  if (has_seq({"no"})) return Judgment::Correct;
  return Judgment::Unparseable;
}

std::string request_to_json_line(const VlmRequest& r) {
  json j;
  j["id"] = r.id;
  j["prompt"] = r.prompt;
  json ref;
  ref["image_id"] = r.image_id;
  ref["overlay"] = {{"bbox", {r.overlay_bbox.x, r.overlay_bbox.y, r.overlay_bbox.w, r.overlay_bbox.h}},
                    {"color", "yellow"}};
  j["image_ref"] = std::move(ref);
  j["context_image_refs"] = r.context_image_ids;
  j["prompt_type"] = to_string(r.type);
  j["label"] = r.label;
  return j.dump();
}

namespace {
PromptType type_from_string(const std::string& s) {
  PromptType t;
  std::string base = s;
  if (auto plus = base.find("+history"); plus != std::string::npos) {
    t.with_history = true;
    base.erase(plus);
  }
  if (base == "normal")
    t.kind = PromptKind::Normal;
  else if (base == "qtype-hint")
    t.kind = PromptKind::QTypeHint;
  else if (base == "time-hint")
    t.kind = PromptKind::TimeHint;
  else
    throw std::runtime_error("unknown prompt type " + s);
  return t;
}
}  // namespace

std::vector<VlmRequest> load_requests(const std::string& path) {
  std::vector<VlmRequest> out;
  util::LineReader reader(path);
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    VlmRequest r;
    r.id = j.at("id").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    const json& ref = j.at("image_ref");
    r.image_id = ref.at("image_id").get<std::string>();
    const json& bb = ref.at("overlay").at("bbox");
    r.overlay_bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
    if (j.contains("context_image_refs"))
      r.context_image_ids = j.at("context_image_refs").get<std::vector<std::string>>();
    r.type = type_from_string(j.at("prompt_type").get<std::string>());
    r.label = j.at("label").get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<VlmResponse> load_responses(const std::string& path) {
  std::vector<VlmResponse> out;
  util::LineReader reader(path);
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
  }
  return out;
}

VlmScore score_vlm_run(std::span<const VlmRequest> requests, std::span<const VlmResponse> responses) {
  std::map<std::string, const VlmResponse*> by_id;
  for (const auto& r : responses) by_id[r.id] = &r;

  VlmScore score;
  for (PromptKind kind : {PromptKind::Normal, PromptKind::QTypeHint, PromptKind::TimeHint}) {
    for (bool hist : {false, true}) score.cells.push_back({PromptType{kind, hist}, {}, 0});
  }
  auto cell_for = [&](PromptType t) -> VlmCell& {
    for (auto& c : score.cells) {
      if (c.type == t) return c;
    }
    throw std::logic_error("score_vlm_run: unmapped prompt type");
  };

  for (const auto& req : requests) {
    auto it = by_id.find(req.id);
    if (it == by_id.end()) {
      score.missing_ids.push_back(req.id);
      continue;
    }
    Judgment j = parse_vlm_output(it->second->text);
    int pred = j == Judgment::Mistake ? 1 : 0;  // Unparseable scores as "correct answer"
    VlmCell& cell = cell_for(req.type);
    if (j == Judgment::Unparseable) {
      ++cell.unparseable;
      ++score.unparseable;
    }
    const int p[1] = {pred};
    const int l[1] = {req.label};
    eval::Confusion c = eval::confusion(p, l);
    cell.confusion += c;
    score.overall += c;
    ++score.scored;
  }
  return score;
}

eval::EvalReport to_eval_report(const VlmScore& score, std::uint64_t seed) {
  eval::EvalReport report;
  report.dataset = "vlm-run";
  report.model_tag = "vlm";
  report.seed = seed;
  report.overall = score.overall;
  for (const auto& cell : score.cells) report.slices[to_string(cell.type)] = cell.confusion;
  if (score.unparseable > 0)
    report.flags.push_back(std::to_string(score.unparseable) + " unparseable responses scored as correct");
  for (const auto& id : score.missing_ids) report.flags.push_back("missing response for " + id);
  if (score.scored == 0) report.flags.push_back("zero coverage");
  return report;
}

std::string render_vlm_report(const VlmScore& score, std::uint64_t seed) {
  std::ostringstream out;
  out << "schema = vlm-report/1\n";
  out << "seed = " << seed << "\n";
  out << "scored = " << score.scored << "\n";
  out << "unparseable = " << score.unparseable << "\n";
  out << "missing = " << score.missing_ids.size() << "\n";
  for (const auto& id : score.missing_ids) out << "missing_id = " << id << "\n";
  if (score.scored == 0) out << "coverage = zero\n";
  out << "\n[prompt-type-by-history]\n";
  for (const auto& cell : score.cells) {
    const eval::Confusion& c = cell.confusion;
    out << to_string(cell.type) << " = f=" << util::format_fixed(eval::f_score(c), 6)
        << " recall=" << util::format_fixed(eval::recall(c), 6)
        << " precision=" << util::format_fixed(eval::precision(c), 6) << " n=" << c.total()
        << " unparseable=" << cell.unparseable << "\n";
  }
  return out.str();
}

}  // namespace mistake::prompts
