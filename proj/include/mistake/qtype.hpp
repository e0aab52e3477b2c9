#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mistake::qtype {

enum class QuestionType { Spatial, Object, Color, Action, Size, SuperCategory, Texture, Shape, Others };

inline constexpr std::size_t kNumQuestionTypes = 9;

/// All nine types in a fixed reporting order.
std::array<QuestionType, kNumQuestionTypes> all_types();

std::string_view to_string(QuestionType t);
std::optional<QuestionType> from_string(std::string_view name);

/// Ordered keyword lists; precedence is the entry order. The Object category
/// is pattern-based ("is it a/an ...") and Others is the fallback, so neither
/// carries keywords here.
struct KeywordTable {
  std::vector<std::pair<QuestionType, std::vector<std::string>>> entries;

  static KeywordTable defaults();
  /// One line per entry, `type: kw, kw, ...`. Blank lines and `#` comments
  /// allowed. Line order defines precedence.
  static KeywordTable load(std::istream& in);
  static KeywordTable load_file(const std::string& path);
};

/// Lowercased, punctuation stripped, whitespace tokenized.
std::vector<std::string> normalize_question(std::string_view text);

/// First keyword-owning type in table order wins; then the "is it a/an"
/// pattern maps to Object; everything else is Others.
QuestionType classify_question(std::string_view text, const KeywordTable& table);

}  // namespace mistake::qtype
