#include "mistake/qtype.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::qtype {

std::array<QuestionType, kNumQuestionTypes> all_types() {
  return {QuestionType::Spatial, QuestionType::Object, QuestionType::Color,
          QuestionType::Action,  QuestionType::Size,   QuestionType::SuperCategory,
          QuestionType::Texture, QuestionType::Shape,  QuestionType::Others};
}

std::string_view to_string(QuestionType t) {
  switch (t) {
    case QuestionType::Spatial: return "spatial";
    case QuestionType::Object: return "object";
    case QuestionType::Color: return "color";
    case QuestionType::Action: return "action";
    case QuestionType::Size: return "size";
    case QuestionType::SuperCategory: return "super-category";
    case QuestionType::Texture: return "texture";
    case QuestionType::Shape: return "shape";
    case QuestionType::Others: return "others";
  }
  return "others";
}

std::optional<QuestionType> from_string(std::string_view name) {
  std::string s = util::to_lower(name);
  for (QuestionType t : all_types()) {
    if (s == to_string(t)) return t;
  }
  if (s == "supercategory" || s == "s-category") return QuestionType::SuperCategory;
  return std::nullopt;
}

KeywordTable KeywordTable::defaults() {
  KeywordTable t;
  t.entries = {
      {QuestionType::Spatial,
       {"left", "right", "top", "bottom", "front", "back", "behind", "near", "next", "side", "middle",
        "corner", "half", "closest", "between"}},
      {QuestionType::Color,
       {"white", "black", "red", "blue", "green", "yellow", "brown", "pink", "orange", "purple", "gray",
        "grey", "color", "colour"}},
      {QuestionType::Size,
       {"small", "big", "large", "tiny", "tall", "short", "huge", "smaller", "bigger", "largest",
        "smallest"}},
      {QuestionType::Shape, {"round", "square", "rectangular", "circular", "shape"}},
      {QuestionType::Texture, {"wooden", "metal", "plastic", "glass", "made"}},
      {QuestionType::Action,
       {"wearing", "holding", "sitting", "standing", "walking", "eating", "playing", "riding", "carrying",
        "looking"}},
      {QuestionType::SuperCategory,
       {"object", "animal", "vehicle", "food", "furniture", "electronic", "person", "human", "appliance",
        "clothing"}},
  };
  return t;
}

KeywordTable KeywordTable::load(std::istream& in) {
  KeywordTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("keyword table line " + std::to_string(line_no) + ": expected `type: keywords`");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string type_name = trim(line.substr(0, colon));
    auto type = from_string(type_name);
    if (!type)
      throw std::runtime_error("keyword table line " + std::to_string(line_no) + ": unknown type `" +
                               type_name + "`");
    if (*type == QuestionType::Others || *type == QuestionType::Object)
      throw std::runtime_error("keyword table line " + std::to_string(line_no) + ": `" + type_name +
                               "` takes no keywords");
    std::vector<std::string> kws;
    std::stringstream rest(line.substr(colon + 1));
    std::string kw;
    while (std::getline(rest, kw, ',')) {
      kw = trim(kw);
      if (!kw.empty()) kws.push_back(util::to_lower(kw));
    }
    t.entries.emplace_back(*type, std::move(kws));
  }
  return t;
}

KeywordTable KeywordTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keyword table " + path);
  return load(in);
}

std::vector<std::string> normalize_question(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    bool alnum = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
    if (alnum) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

QuestionType classify_question(std::string_view text, const KeywordTable& table) {
  const std::vector<std::string> tokens = normalize_question(text);
  for (const auto& [type, keywords] : table.entries) {
    for (const std::string& tok : tokens) {
      if (std::find(keywords.begin(), keywords.end(), tok) != keywords.end()) return type;
    }
  }
  // "Is it a car?"-style questions with no keyword hit are Object questions.
  if (tokens.size() >= 4 && tokens[0] == "is" && tokens[1] == "it" && (tokens[2] == "a" || tokens[2] == "an"))
    return QuestionType::Object;
  return QuestionType::Others;
}

}  // namespace mistake::qtype
