#pragma once

// Sokoban rules, reward accounting and pixel rendering for a fixed 10x10 board.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sokotl {

inline constexpr int kBoardSize = 10;
inline constexpr int kCells = kBoardSize * kBoardSize;
inline constexpr int kMaxBoxes = 3;
inline constexpr int kDefaultMaxEpisodeSteps = 120;

inline constexpr int kTilePixels = 8;
inline constexpr int kObsPadding = 2;
inline constexpr int kObsSize = kBoardSize * kTilePixels + 2 * kObsPadding;  // 84
inline constexpr int kObsChannels = 3;
inline constexpr int kObsValues = kObsSize * kObsSize * kObsChannels;

enum class Tile : std::uint8_t { Wall, Floor, Target };

// Action indices are stable everywhere (network outputs, plans, CSVs).
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kAllActions = {Action::Up, Action::Down, Action::Left,
                                                                Action::Right};

constexpr int action_index(Action a) noexcept { return static_cast<int>(a); }
Action action_from_index(int i);
char action_letter(Action a) noexcept;  // 'u','d','l','r'
Action action_from_letter(char c);

struct Cell {
  int row = 0;
  int col = 0;

  constexpr int index() const noexcept { return row * kBoardSize + col; }
  static constexpr Cell from_index(int i) noexcept { return {i / kBoardSize, i % kBoardSize}; }
  friend constexpr bool operator==(Cell, Cell) = default;
};

// Cell index reached by moving one step; caller guarantees the source is interior.
constexpr int neighbor(int cell, Action a) noexcept {
  switch (a) {
    case Action::Up: return cell - kBoardSize;
    case Action::Down: return cell + kBoardSize;
    case Action::Left: return cell - 1;
    case Action::Right: return cell + 1;
  }
  return cell;
}

using Grid = std::array<Tile, kCells>;

// Sorted, fixed-capacity set of box cell indices.
class BoxSet {
 public:
  BoxSet() = default;
  explicit BoxSet(std::span<const int> cells);

  int size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  bool contains(int cell) const noexcept;
  int operator[](int i) const noexcept { return cells_[static_cast<std::size_t>(i)]; }
  const std::uint8_t* begin() const noexcept { return cells_.data(); }
  const std::uint8_t* end() const noexcept { return cells_.data() + size_; }

  void insert(int cell);
  void move(int from, int to);

  friend bool operator==(const BoxSet& a, const BoxSet& b) noexcept;
  friend std::strong_ordering operator<=>(const BoxSet& a, const BoxSet& b) noexcept;

 private:
  std::array<std::uint8_t, kMaxBoxes> cells_{};
  std::uint8_t size_ = 0;
};

struct GameState {
  Grid grid{};
  BoxSet boxes;
  int player = 0;  // cell index
  int steps_taken = 0;

  int box_count() const noexcept { return boxes.size(); }
  Cell player_cell() const noexcept { return Cell::from_index(player); }
  int boxes_on_target() const noexcept;
  bool solved() const noexcept { return boxes_on_target() == boxes.size(); }

  friend bool operator==(const GameState&, const GameState&) = default;
};

struct Level {
  std::string id;
  Grid grid{};
  BoxSet boxes;
  int player = 0;
  std::optional<int> optimal_length;  // filled by the planner

  friend bool operator==(const Level&, const Level&) = default;
};

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  bool solved = false;
};

struct EngineConfig {
  int max_episode_steps = kDefaultMaxEpisodeSteps;
};

class LevelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reward components, in tenths so episode sums stay exact.
inline constexpr int kStepPenaltyTenths = -1;
inline constexpr int kOnTargetTenths = 10;
inline constexpr int kOffTargetTenths = -10;
inline constexpr int kSolveBonusTenths = 100;

// Returns a diagnostic when the level breaks an engine invariant.
std::optional<std::string> check_level(const Level& level);

GameState reset(const Level& level);

bool is_terminal(const GameState& state, const EngineConfig& config = {}) noexcept;

// Throws std::logic_error when called on a terminal state.
std::pair<GameState, StepOutcome> step(const GameState& state, Action action, const EngineConfig& config = {});

// Undiscounted sum. Rewards live on a 0.1 lattice, so the sum is taken in tenths.
double episode_return(std::span<const double> rewards);

// ---- rendering ----

enum class Palette : std::uint8_t { Base, Game2 };

Palette palette_from_string(std::string_view s);
std::string_view to_string(Palette p) noexcept;

// 84x84x3 intensities stored as bytes; intensity = byte / 255.
struct Observation {
  std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(kObsValues, 0);

  float intensity(std::size_t i) const noexcept { return static_cast<float>(bytes[i]) * (1.0f / 255.0f); }
  std::uint8_t at(int y, int x, int channel) const noexcept {
    return bytes[static_cast<std::size_t>((y * kObsSize + x) * kObsChannels + channel)];
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

Observation render(const GameState& state, Palette palette);

// ---- level text format ----

// One level: "; <id>" then ten rows of '#', ' ', '.', '$', '*', '@', '+'.
std::string format_level(const Level& level);
std::string format_levels(std::span<const Level> levels);
std::vector<Level> parse_levels(std::string_view text);

std::vector<Level> load_levels(const std::string& path);
void save_levels(const std::string& path, std::span<const Level> levels);

}  // namespace sokotl
