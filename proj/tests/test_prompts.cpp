#include <doctest.h>

#include <set>

#include "mistake/prompts.hpp"
#include "mistake/util.hpp"

using namespace mistake;
using prompts::PromptExample;
using prompts::PromptKind;
using prompts::PromptType;

namespace {

PromptExample golden_example() {
  PromptExample ex;
  ex.image_id = "img-77";
  ex.overlay_bbox = {40, 30, 120, 90};
  ex.category_name = "donut";
  ex.history = {{"Is it food?", corpus::Answer::Yes, std::nullopt},
                {"Is it round?", corpus::Answer::No, std::nullopt}};
  ex.question = "Is it a donut?";
  ex.answer = corpus::Answer::Yes;
  ex.question_type = qtype::QuestionType::Object;
  ex.normalized_turn = 0.5;
  ex.gold_mistake = false;
  return ex;
}

std::string golden(const std::string& name) {
  return util::read_file(std::string(MISTAKE_GOLDEN_DIR) + "/" + name);
}

}  // namespace

TEST_CASE("the six template variants render byte-identical to the frozen goldens") {
  const PromptExample ex = golden_example();
  const std::pair<PromptType, const char*> cases[] = {
      {{PromptKind::Normal, false}, "prompt_normal.txt"},
      {{PromptKind::QTypeHint, false}, "prompt_qtype.txt"},
      {{PromptKind::TimeHint, false}, "prompt_time.txt"},
      {{PromptKind::Normal, true}, "prompt_normal_history.txt"},
      {{PromptKind::QTypeHint, true}, "prompt_qtype_history.txt"},
      {{PromptKind::TimeHint, true}, "prompt_time_history.txt"},
  };
  for (const auto& [type, file] : cases) {
    CAPTURE(file);
    CHECK(prompts::build_prompt(ex, type, /*as_context=*/true) == golden(file));
  }
}

TEST_CASE("the six variants of one example are pairwise distinct") {
  const PromptExample ex = golden_example();
  std::set<std::string> rendered;
  for (PromptKind kind : {PromptKind::Normal, PromptKind::QTypeHint, PromptKind::TimeHint}) {
    for (bool hist : {false, true}) rendered.insert(prompts::build_prompt(ex, {kind, hist}, true));
  }
  CHECK(rendered.size() == 6);
}

TEST_CASE("turn formatting trims to at most three decimals") {
  CHECK(prompts::format_turn(0.5) == "0.5");
  CHECK(prompts::format_turn(2.0 / 3.0) == "0.667");
  CHECK(prompts::format_turn(1.0) == "1");
  CHECK(prompts::format_turn(0.25) == "0.25");
  PromptExample ex = golden_example();
  ex.normalized_turn = 0.5;
  std::string p = prompts::build_prompt(ex, {PromptKind::TimeHint, false}, true);
  CHECK(p.find("Question at 0.5 progression of dialogue:") != std::string::npos);
}

TEST_CASE("missing required fields raise errors naming the field") {
  PromptExample ex = golden_example();
  ex.history.clear();
  CHECK_THROWS_WITH(prompts::build_prompt(ex, {PromptKind::Normal, true}, true),
                    doctest::Contains("history"));
  ex = golden_example();
  ex.question_type.reset();
  CHECK_THROWS_WITH(prompts::build_prompt(ex, {PromptKind::QTypeHint, false}, true),
                    doctest::Contains("question_type"));
  ex = golden_example();
  ex.normalized_turn.reset();
  CHECK_THROWS_WITH(prompts::build_prompt(ex, {PromptKind::TimeHint, false}, true),
                    doctest::Contains("normalized_turn"));
  ex = golden_example();
  ex.gold_mistake.reset();
  CHECK_THROWS_WITH(prompts::build_prompt(ex, {PromptKind::Normal, false}, true),
                    doctest::Contains("gold_mistake"));
  // The query slot needs no gold judgment.
  CHECK_NOTHROW(prompts::build_prompt(ex, {PromptKind::Normal, false}, false));
}

namespace {
std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}
}  // namespace

TEST_CASE("few-shot assembly carries 9 images, 8 closed outputs, 1 open query") {
  std::vector<PromptExample> context(8, golden_example());
  for (std::size_t i = 0; i < context.size(); ++i) {
    context[i].image_id = "ctx-" + std::to_string(i);
    context[i].gold_mistake = i % 2 == 0;
  }
  PromptExample query = golden_example();
  query.gold_mistake.reset();

  std::string assembled = prompts::assemble_fewshot(context, query, {PromptKind::Normal, false});
  CHECK(count_occurrences(assembled, "<image>") == 9);
  CHECK(count_occurrences(assembled, "<EOC>") == 8);
  CHECK(count_occurrences(assembled, "Output: yes.<EOC>") == 4);
  CHECK(count_occurrences(assembled, "Output: no.<EOC>") == 4);
  CHECK(assembled.substr(assembled.size() - 7) == "Output:");
  CHECK(prompts::assemble_fewshot(context, query, {PromptKind::Normal, false}) == assembled);

  std::vector<PromptExample> seven(context.begin(), context.begin() + 7);
  CHECK_THROWS(prompts::assemble_fewshot(seven, query, {PromptKind::Normal, false}));

  SUBCASE("assembled golden stays frozen") {
    CHECK(assembled == golden("assembled_fewshot.txt"));
  }
}

TEST_CASE("parse_vlm_output applies longest-match-first on the first line") {
  using prompts::Judgment;
  CHECK(prompts::parse_vlm_output("Yes.") == Judgment::Mistake);
  CHECK(prompts::parse_vlm_output("yes, definitely") == Judgment::Mistake);
  CHECK(prompts::parse_vlm_output("not a mistake") == Judgment::Correct);
  CHECK(prompts::parse_vlm_output("This is not a mistake.") == Judgment::Correct);
  CHECK(prompts::parse_vlm_output("It is a MISTAKE") == Judgment::Mistake);
  CHECK(prompts::parse_vlm_output("No") == Judgment::Correct);
  CHECK(prompts::parse_vlm_output("maybe") == Judgment::Unparseable);
  CHECK(prompts::parse_vlm_output("") == Judgment::Unparseable);
  // Only the first line counts.
  CHECK(prompts::parse_vlm_output("hmm\nyes") == Judgment::Unparseable);
  // Token match, not substring: "nothing" is not "no".
  CHECK(prompts::parse_vlm_output("nothing to report") == Judgment::Unparseable);
}

TEST_CASE("score_vlm_run tallies cells, unparseable, and missing responses") {
  std::vector<prompts::VlmRequest> requests;
  std::vector<prompts::VlmResponse> responses;
  auto add = [&](const std::string& id, PromptType t, int label, const char* text) {
    prompts::VlmRequest r;
    r.id = id;
    r.prompt = "p";
    r.image_id = "img";
    r.type = t;
    r.label = label;
    requests.push_back(r);
    if (text) responses.push_back({id, text});
  };
  add("a", {PromptKind::Normal, false}, 1, "yes");
  add("b", {PromptKind::Normal, false}, 0, "no");
  add("c", {PromptKind::QTypeHint, true}, 1, "gibberish");  // unparseable -> pred 0 -> fn
  add("d", {PromptKind::TimeHint, false}, 0, nullptr);      // missing

  prompts::VlmScore score = prompts::score_vlm_run(requests, responses);
  CHECK(score.scored == 3);
  CHECK(score.unparseable == 1);
  REQUIRE(score.missing_ids.size() == 1);
  CHECK(score.missing_ids[0] == "d");
  CHECK(score.overall.tp == 1);
  CHECK(score.overall.tn == 1);
  CHECK(score.overall.fn == 1);

  std::string report = prompts::render_vlm_report(score, 9);
  CHECK(report.find("normal = f=1.000000") != std::string::npos);
  CHECK(report.find("qtype-hint+history = f=0.000000") != std::string::npos);
  CHECK(report.find("missing_id = d") != std::string::npos);

  SUBCASE("the generic report view keeps slices and flags") {
    eval::EvalReport rep = prompts::to_eval_report(score, 9);
    CHECK(rep.overall == score.overall);
    CHECK(rep.slices.size() == 6);
    CHECK(rep.slices.at("normal").tp == 1);
    bool flagged = false;
    for (const auto& f : rep.flags) flagged = flagged || f.find("unparseable") != std::string::npos;
    CHECK(flagged);
  }
  SUBCASE("an all-correct parseable run scores F = 1") {
    responses = {{"a", "yes"}, {"b", "no"}, {"c", "mistake"}};
    requests.pop_back();  // drop the missing one
    prompts::VlmScore s2 = prompts::score_vlm_run(requests, responses);
    CHECK(eval::f_score(s2.overall) == 1.0);
    CHECK(s2.unparseable == 0);
  }
  SUBCASE("an empty response set flags zero coverage") {
    prompts::VlmScore s3 = prompts::score_vlm_run(requests, {});
    CHECK(s3.scored == 0);
    CHECK(prompts::render_vlm_report(s3, 9).find("coverage = zero") != std::string::npos);
  }
}
