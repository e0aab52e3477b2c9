#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mistake/corpus.hpp"
#include "mistake/eval.hpp"
#include "mistake/qtype.hpp"

namespace mistake::prompts {

enum class PromptKind { Normal, QTypeHint, TimeHint };

struct PromptType {
  PromptKind kind = PromptKind::Normal;
  bool with_history = false;
  bool operator==(const PromptType&) const = default;
};

std::string to_string(PromptType t);

/// Everything one prompt can mention. Rasterizing the yellow rectangle is the
/// external runner's job; we only carry the overlay spec.
struct PromptExample {
  std::string image_id;
  corpus::BBox overlay_bbox;
  std::string category_name;
  std::vector<corpus::QAPair> history;  // QA pairs before the judged one
  std::string question;
  corpus::Answer answer = corpus::Answer::Yes;
  std::optional<qtype::QuestionType> question_type;
  std::optional<double> normalized_turn;
  std::optional<bool> gold_mistake;  // required for context slots
};

/// Normalized turn with up to 3 decimals, trailing zeros trimmed.
std::string format_turn(double turn);

/// Renders one prompt. Context prompts (`as_context` true) fill the Output
/// slot from the gold judgment and close with <EOC>; the query leaves Output
/// empty and unterminated. Missing required fields raise an error naming the
/// field.
std::string build_prompt(const PromptExample& example, PromptType type, bool as_context);

/// Exactly eight completed context prompts followed by the open query prompt.
std::string assemble_fewshot(std::span<const PromptExample> context, const PromptExample& query,
                             PromptType type);

enum class Judgment { Correct = 0, Mistake = 1, Unparseable = 2 };

/// First line only, case-insensitive, longest match first:
/// "not a mistake"/"no" -> Correct, "mistake"/"yes" -> Mistake.
Judgment parse_vlm_output(std::string_view text);

struct VlmRequest {
  std::string id;
  std::string prompt;
  std::string image_id;          // query image; context images ride alongside
  corpus::BBox overlay_bbox;     // rendered as a yellow rectangle by the runner
  std::vector<std::string> context_image_ids;
  PromptType type;
  int label = 0;  // gold judgment of the query, used for scoring
};

struct VlmResponse {
  std::string id;
  std::string text;
};

std::string request_to_json_line(const VlmRequest& r);
std::vector<VlmRequest> load_requests(const std::string& path);
std::vector<VlmResponse> load_responses(const std::string& path);

struct VlmCell {
  PromptType type;
  eval::Confusion confusion;
  std::uint64_t unparseable = 0;  // counted as prediction 0, tallied apart
};

struct VlmScore {
  std::vector<VlmCell> cells;  // the six (kind x history) cells, fixed order
  eval::Confusion overall;
  std::uint64_t unparseable = 0;
  std::vector<std::string> missing_ids;
  std::uint64_t scored = 0;
};

VlmScore score_vlm_run(std::span<const VlmRequest> requests, std::span<const VlmResponse> responses);

/// The same scores as a generic evaluation report: overall metrics plus one
/// slice per (prompt type x history) cell.
eval::EvalReport to_eval_report(const VlmScore& score, std::uint64_t seed);

/// Byte-stable structured-text rendering shaped as prompt-type x history.
std::string render_vlm_report(const VlmScore& score, std::uint64_t seed);

}  // namespace mistake::prompts
