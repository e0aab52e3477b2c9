#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace mistake::corpus {

enum class Answer { Yes, No, NA };
enum class GameStatus { Success, Failure, Incomplete };

std::string_view to_string(Answer a);
std::string_view to_string(GameStatus s);
std::optional<Answer> answer_from_string(std::string_view s);
std::optional<GameStatus> status_from_string(std::string_view s);

struct BBox {
  double x = 0;  // left edge, pixels
  double y = 0;  // top edge, pixels
  double w = 0;
  double h = 0;
  double area() const { return w * h; }
  bool operator==(const BBox&) const = default;
};

struct ImageInfo {
  std::string image_id;
  double width = 0;
  double height = 0;
  std::optional<std::string> feature_key;
  bool operator==(const ImageInfo&) const = default;
};

struct ObjectRef {
  std::string object_id;
  std::string category_name;
  BBox bbox;
  bool operator==(const ObjectRef&) const = default;
};

struct QAPair {
  std::string question;
  Answer answer = Answer::Yes;
  std::optional<bool> mistake_label;  // present only for Yes/No answers
  bool operator==(const QAPair&) const = default;
};

struct GameRecord {
  std::string game_id;
  ImageInfo image;
  std::vector<ObjectRef> objects;
  std::string target_object_id;
  std::vector<QAPair> qas;
  GameStatus status = GameStatus::Incomplete;

  std::size_t total_turns() const { return qas.size(); }
  const ObjectRef& target() const;  // throws if target_object_id is not among objects
  bool operator==(const GameRecord&) const = default;
};

/// Empty string when the record satisfies all invariants, else the reason.
std::string validate(const GameRecord& game);

enum class SplitPurpose { PretrainTrain, PretrainVal, FinetunePool, TestSameImage, TestDifferentImage };

struct CorpusSplit {
  std::string name;
  std::set<std::string> game_ids;
  SplitPurpose purpose = SplitPurpose::FinetunePool;
};

/// Empty string when splits with distinct purposes are pairwise disjoint,
/// else the first offending pair and game id.
std::string validate_splits(std::span<const CorpusSplit> splits);

struct ParseError {
  std::size_t line = 0;  // 1-based input line
  std::string field;
  std::string message;
};

struct ParseOptions {
  bool strict = false;  // true: throw on first bad record instead of skipping
};

struct ParseResult {
  std::vector<GameRecord> games;
  std::vector<ParseError> errors;
};

ParseResult parse_games(std::istream& in, const ParseOptions& opts = {});
ParseResult load_games(const std::string& path, const ParseOptions& opts = {});  // .gz aware

std::string to_json_line(const GameRecord& game);
void write_games(std::ostream& out, std::span<const GameRecord> games);
void save_games(const std::string& path, std::span<const GameRecord> games);

/// Keeps games whose target bbox covers at least `tau` of the image area.
std::vector<GameRecord> filter_by_target_size(std::span<const GameRecord> games, double tau);

/// Partitions by image membership in the pretraining image id set.
std::pair<std::vector<GameRecord>, std::vector<GameRecord>> split_same_different(
    std::span<const GameRecord> games, const std::set<std::string>& pretrain_image_ids);

/// Disjoint folds covering the input, sizes differing by at most one.
std::vector<std::vector<GameRecord>> kfold_split(std::span<const GameRecord> games, std::size_t k,
                                                 std::uint64_t seed);

}  // namespace mistake::corpus
