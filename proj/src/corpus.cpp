#include "mistake/corpus.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <stdexcept>

#include "mistake/util.hpp"

namespace mistake::corpus {

using json = nlohmann::ordered_json;

std::string_view to_string(Answer a) {
  switch (a) {
    case Answer::Yes: return "Yes";
    case Answer::No: return "No";
    case Answer::NA: return "N/A";
  }
  return "N/A";
}

std::string_view to_string(GameStatus s) {
  switch (s) {
    case GameStatus::Success: return "success";
    case GameStatus::Failure: return "failure";
    case GameStatus::Incomplete: return "incomplete";
  }
  return "incomplete";
}

std::optional<Answer> answer_from_string(std::string_view s) {
  if (s == "Yes") return Answer::Yes;
  if (s == "No") return Answer::No;
  if (s == "N/A") return Answer::NA;
  return std::nullopt;
}

std::optional<GameStatus> status_from_string(std::string_view s) {
  if (s == "success") return GameStatus::Success;
  if (s == "failure") return GameStatus::Failure;
  if (s == "incomplete") return GameStatus::Incomplete;
  return std::nullopt;
}

const ObjectRef& GameRecord::target() const {
  for (const auto& o : objects) {
    if (o.object_id == target_object_id) return o;
  }
  throw std::runtime_error("game " + game_id + ": target_object_id not among objects");
}

std::string validate(const GameRecord& game) {
  if (game.game_id.empty()) return "game_id empty";
  if (game.image.width <= 0 || game.image.height <= 0) return "image dimensions must be positive";
  if (game.objects.empty()) return "objects empty";
  if (game.qas.empty()) return "qas empty";
  std::size_t target_hits = 0;
  std::set<std::string> ids;
  for (const auto& o : game.objects) {
    if (!ids.insert(o.object_id).second) return "duplicate object_id " + o.object_id;
    if (o.object_id == game.target_object_id) ++target_hits;
    const BBox& b = o.bbox;
    if (b.w <= 0 || b.h <= 0) return "object " + o.object_id + ": bbox w/h must be positive";
    if (b.x < 0 || b.y < 0 || b.x + b.w > game.image.width || b.y + b.h > game.image.height)
      return "object " + o.object_id + ": bbox outside image";
  }
  if (target_hits != 1) return "target_object_id must match exactly one object";
  for (std::size_t i = 0; i < game.qas.size(); ++i) {
    const QAPair& qa = game.qas[i];
    if (qa.question.empty()) return "qas[" + std::to_string(i) + "]: question empty";
    if (qa.mistake_label.has_value() && qa.answer == Answer::NA)
      return "qas[" + std::to_string(i) + "]: N/A answers cannot carry a mistake label";
  }
  return "";
}

namespace {

GameRecord record_from_json(const json& j, std::string& bad_field) {
  auto need = [&](const json& obj, const char* key) -> const json& {
    auto it = obj.find(key);
    if (it == obj.end()) {
      bad_field = key;
      throw std::runtime_error(std::string("missing field ") + key);
    }
    return *it;
  };

  GameRecord g;
  g.game_id = need(j, "game_id").get<std::string>();

  bad_field = "status";
  auto status = status_from_string(need(j, "status").get<std::string>());
  if (!status) throw std::runtime_error("unknown status value");
  g.status = *status;

  bad_field = "image";
  const json& im = need(j, "image");
  g.image.image_id = need(im, "id").get<std::string>();
  g.image.width = need(im, "width").get<double>();
  g.image.height = need(im, "height").get<double>();
  if (im.contains("feature_key")) g.image.feature_key = im.at("feature_key").get<std::string>();

  bad_field = "objects";
  for (const json& jo : need(j, "objects")) {
    ObjectRef o;
    o.object_id = need(jo, "object_id").get<std::string>();
    o.category_name = need(jo, "category").get<std::string>();
    const json& bb = need(jo, "bbox");
    if (!bb.is_array() || bb.size() != 4) throw std::runtime_error("bbox must be [x, y, w, h]");
    o.bbox = BBox{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
    g.objects.push_back(std::move(o));
  }

  bad_field = "target_object_id";
  g.target_object_id = need(j, "target_object_id").get<std::string>();

  bad_field = "qas";
  for (const json& jq : need(j, "qas")) {
    QAPair qa;
    qa.question = need(jq, "question").get<std::string>();
    auto ans = answer_from_string(need(jq, "answer").get<std::string>());
    if (!ans) throw std::runtime_error("answer must be Yes, No, or N/A");
    qa.answer = *ans;
    if (jq.contains("mistake")) qa.mistake_label = jq.at("mistake").get<bool>();
    g.qas.push_back(std::move(qa));
  }
  bad_field.clear();
  return g;
}

ParseResult parse_lines(const std::function<bool(std::string&)>& next_line, const ParseOptions& opts) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (next_line(line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string bad_field;
    try {
      json j = json::parse(line);
      GameRecord g = record_from_json(j, bad_field);
      if (std::string reason = validate(g); !reason.empty()) {
        bad_field = "record";
        throw std::runtime_error(reason);
      }
      result.games.push_back(std::move(g));
    } catch (const std::exception& e) {
      ParseError err{line_no, bad_field, e.what()};
      if (opts.strict) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 (bad_field.empty() ? "" : " (field " + bad_field + ")") + ": " + e.what());
      }
      result.errors.push_back(std::move(err));
    }
  }
  return result;
}

}  // namespace

ParseResult parse_games(std::istream& in, const ParseOptions& opts) {
  return parse_lines([&](std::string& line) { return static_cast<bool>(std::getline(in, line)); }, opts);
}

ParseResult load_games(const std::string& path, const ParseOptions& opts) {
  util::LineReader reader(path);
  return parse_lines([&](std::string& line) { return reader.next(line); }, opts);
}

std::string to_json_line(const GameRecord& g) {
  json j;
  j["game_id"] = g.game_id;
  j["status"] = std::string(to_string(g.status));
  json im;
  im["id"] = g.image.image_id;
  im["width"] = g.image.width;
  im["height"] = g.image.height;
  if (g.image.feature_key) im["feature_key"] = *g.image.feature_key;
  j["image"] = std::move(im);
  json objs = json::array();
  for (const auto& o : g.objects) {
    json jo;
    jo["object_id"] = o.object_id;
    jo["category"] = o.category_name;
    jo["bbox"] = {o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h};
    objs.push_back(std::move(jo));
  }
  j["objects"] = std::move(objs);
  j["target_object_id"] = g.target_object_id;
  json qas = json::array();
  for (const auto& qa : g.qas) {
    json jq;
    jq["question"] = qa.question;
    jq["answer"] = std::string(to_string(qa.answer));
    if (qa.mistake_label) jq["mistake"] = *qa.mistake_label;
    qas.push_back(std::move(jq));
  }
  j["qas"] = std::move(qas);
  return j.dump();
}

void write_games(std::ostream& out, std::span<const GameRecord> games) {
  for (const auto& g : games) out << to_json_line(g) << '\n';
}

void save_games(const std::string& path, std::span<const GameRecord> games) {
  std::ostringstream ss;
  write_games(ss, games);
  util::write_file_atomic(path, ss.str());
}

std::vector<GameRecord> filter_by_target_size(std::span<const GameRecord> games, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0, 1)");
  std::vector<GameRecord> kept;
  for (const auto& g : games) {
    double image_area = g.image.width * g.image.height;
    if (g.target().bbox.area() / image_area >= tau) kept.push_back(g);
  }
  return kept;
}

std::pair<std::vector<GameRecord>, std::vector<GameRecord>> split_same_different(
    std::span<const GameRecord> games, const std::set<std::string>& pretrain_image_ids) {
  std::pair<std::vector<GameRecord>, std::vector<GameRecord>> out;
  for (const auto& g : games) {
    if (pretrain_image_ids.count(g.image.image_id))
      out.first.push_back(g);
    else
      out.second.push_back(g);
  }
  return out;
}

std::string validate_splits(std::span<const CorpusSplit> splits) {
  for (std::size_t i = 0; i < splits.size(); ++i) {
    for (std::size_t j = i + 1; j < splits.size(); ++j) {
      if (splits[i].purpose == splits[j].purpose) continue;
      for (const auto& id : splits[i].game_ids) {
        if (splits[j].game_ids.count(id))
          return "game " + id + " appears in both " + splits[i].name + " and " + splits[j].name;
      }
    }
  }
  return "";
}

std::vector<std::vector<GameRecord>> kfold_split(std::span<const GameRecord> games, std::size_t k,
                                                 std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (games.size() < k) throw std::invalid_argument("kfold_split: more folds than games");
  std::vector<std::size_t> order(games.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  util::Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<GameRecord>> folds(k);
  for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(games[order[i]]);
  return folds;
}

}  // namespace mistake::corpus
