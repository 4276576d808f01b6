#include "sokotl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sokotl {

Action action_from_index(int i) {
  if (i < 0 || i >= kNumActions) throw std::out_of_range("action index out of range: " + std::to_string(i));
  return static_cast<Action>(i);
}

char action_letter(Action a) noexcept {
  constexpr std::array<char, kNumActions> letters = {'u', 'd', 'l', 'r'};
  return letters[static_cast<std::size_t>(a)];
}

Action action_from_letter(char c) {
  switch (c) {
    case 'u': case 'U': return Action::Up;
    case 'd': case 'D': return Action::Down;
    case 'l': case 'L': return Action::Left;
    case 'r': case 'R': return Action::Right;
    default: throw std::invalid_argument(std::string("unknown action letter '") + c + "'");
  }
}

// ---- BoxSet ----

BoxSet::BoxSet(std::span<const int> cells) {
  for (int c : cells) insert(c);
}

bool BoxSet::contains(int cell) const noexcept {
  for (int i = 0; i < size_; ++i)
    if (cells_[static_cast<std::size_t>(i)] == cell) return true;
  return false;
}

void BoxSet::insert(int cell) {
  if (cell < 0 || cell >= kCells) throw std::out_of_range("box cell out of range");
  if (size_ == kMaxBoxes) throw std::length_error("too many boxes");
  if (contains(cell)) throw std::invalid_argument("duplicate box cell");
  cells_[size_++] = static_cast<std::uint8_t>(cell);
  std::sort(cells_.begin(), cells_.begin() + size_);
}

void BoxSet::move(int from, int to) {
  auto* first = cells_.data();
  auto* last = first + size_;
  auto* it = std::find(first, last, static_cast<std::uint8_t>(from));
  *it = static_cast<std::uint8_t>(to);
  std::sort(first, last);
}

bool operator==(const BoxSet& a, const BoxSet& b) noexcept {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

std::strong_ordering operator<=>(const BoxSet& a, const BoxSet& b) noexcept {
  return std::lexicographical_compare_three_way(a.begin(), a.end(), b.begin(), b.end());
}

int GameState::boxes_on_target() const noexcept {
  int n = 0;
  for (auto b : boxes) n += grid[b] == Tile::Target ? 1 : 0;
  return n;
}

// ---- rules ----

std::optional<std::string> check_level(const Level& level) {
  const auto& g = level.grid;
  for (int r = 0; r < kBoardSize; ++r) {
    for (int c = 0; c < kBoardSize; ++c) {
      const bool border = r == 0 || c == 0 || r == kBoardSize - 1 || c == kBoardSize - 1;
      if (border && g[Cell{r, c}.index()] != Tile::Wall)
        return "border cell (" + std::to_string(r) + "," + std::to_string(c) + ") is not a wall";
    }
  }
  const int n = level.boxes.size();
  if (n < 1 || n > kMaxBoxes) return "box count " + std::to_string(n) + " outside [1,3]";
  const auto targets = std::count(g.begin(), g.end(), Tile::Target);
  if (targets != n)
    return "target count " + std::to_string(targets) + " differs from box count " + std::to_string(n);
  for (auto b : level.boxes)
    if (g[b] == Tile::Wall) return "box on wall at cell " + std::to_string(b);
  if (level.player < 0 || level.player >= kCells) return "player cell out of range";
  if (g[level.player] == Tile::Wall) return "player on wall";
  if (level.boxes.contains(level.player)) return "player on box";
  if (std::all_of(level.boxes.begin(), level.boxes.end(), [&](int b) { return g[b] == Tile::Target; }))
    return "all boxes start on targets";
  return std::nullopt;
}

GameState reset(const Level& level) {
  if (auto err = check_level(level)) throw LevelError("level '" + level.id + "': " + *err);
  GameState s;
  s.grid = level.grid;
  s.boxes = level.boxes;
  s.player = level.player;
  s.steps_taken = 0;
  return s;
}

bool is_terminal(const GameState& state, const EngineConfig& config) noexcept {
  return state.solved() || state.steps_taken >= config.max_episode_steps;
}

std::pair<GameState, StepOutcome> step(const GameState& state, Action action, const EngineConfig& config) {
  if (is_terminal(state, config)) throw std::logic_error("step called on a terminal state");

  GameState next = state;
  next.steps_taken = state.steps_taken + 1;
  int tenths = kStepPenaltyTenths;

  const int dest = neighbor(state.player, action);
  if (state.grid[dest] != Tile::Wall) {
    if (state.boxes.contains(dest)) {
      const int beyond = neighbor(dest, action);
      if (state.grid[beyond] != Tile::Wall && !state.boxes.contains(beyond)) {
        next.boxes.move(dest, beyond);
        next.player = dest;
        const bool was_on = state.grid[dest] == Tile::Target;
        const bool now_on = state.grid[beyond] == Tile::Target;
        if (now_on && !was_on) tenths += kOnTargetTenths;
        if (was_on && !now_on) tenths += kOffTargetTenths;
      }
    } else {
      next.player = dest;
    }
  }

  StepOutcome out;
  out.solved = next.solved();
  if (out.solved) tenths += kSolveBonusTenths;
  out.done = out.solved || next.steps_taken >= config.max_episode_steps;
  out.reward = static_cast<double>(tenths) / 10.0;
  return {next, out};
}

double episode_return(std::span<const double> rewards) {
  long long tenths = 0;
  for (double r : rewards) tenths += std::llround(r * 10.0);
  return static_cast<double>(tenths) / 10.0;
}

// ---- rendering ----

Palette palette_from_string(std::string_view s) {
  if (s == "base") return Palette::Base;
  if (s == "game2") return Palette::Game2;
  throw std::invalid_argument("unknown palette '" + std::string(s) + "' (expected base|game2)");
}

std::string_view to_string(Palette p) noexcept { return p == Palette::Base ? "base" : "game2"; }

namespace {

using Pattern = std::array<std::string_view, kTilePixels>;

struct Swatch {
  char key;
  std::uint32_t rgb;
};

// Pixel patterns per tile class. '.' is transparent and shows the tile below.
struct PaletteTable {
  Pattern wall, floor, target, box, box_on_target, player;
  std::array<Swatch, 9> colors;
};

// Base: brick walls, dark floor, red target frame, yellow crate, green worker.
constexpr PaletteTable kBase = {
    {"bbbabbbb", "bbbabbbb", "aaaaaaaa", "bbbbbbba", "bbbbbbba", "aaaaaaaa", "bbbabbbb", "bbbabbbb"},
    {"ffffffff", "ffffffff", "ffffffff", "ffffffff", "ffffffff", "ffffffff", "ffffffff", "ffffffff"},
    {"ffffffff", "fttttttf", "ftfffftf", "ftfffftf", "ftfffftf", "ftfffftf", "fttttttf", "ffffffff"},
    {"oooooooo", "oyyyyyyo", "oyoyyoyo", "oyyooyyo", "oyyooyyo", "oyoyyoyo", "oyyyyyyo", "oooooooo"},
    {"tttttttt", "tyyyyyyt", "tyoyyoyt", "tyyooyyt", "tyyooyyt", "tyoyyoyt", "tyyyyyyt", "tttttttt"},
    {"..gggg..", "..geeg..", "..gkkg..", ".gggggg.", "g.gggg.g", "..gggg..", "..g..g..", ".gg..gg."},
    {{{'a', 0x5A3E2B}, {'b', 0x9C6B47}, {'f', 0x1E1E1E}, {'t', 0xC81E1E}, {'y', 0xE6C200}, {'o', 0x8C6A00},
      {'g', 0x22B14C}, {'k', 0x0A3D17}, {'e', 0xF0F0F0}}},
};

// Game2: striped blue walls, light checker floor, purple X target, cyan diamond box, orange worker.
constexpr PaletteTable kGame2 = {
    {"abbbabbb", "babbbabb", "bbabbbab", "bbbabbba", "abbbabbb", "babbbabb", "bbabbbab", "bbbabbba"},
    {"ffhhffhh", "ffhhffhh", "hhffhhff", "hhffhhff", "ffhhffhh", "ffhhffhh", "hhffhhff", "hhffhhff"},
    {"tfffffft", "ftfffftf", "fftfftff", "fffttfff", "fffttfff", "fftfftff", "ftfffftf", "tfffffft"},
    {"fffddfff", "ffdccdff", "fdccccdf", "dccccccd", "dccccccd", "fdccccdf", "ffdccdff", "fffddfff"},
    {"tttddttt", "ttdccdtt", "tdccccdt", "dccccccd", "dccccccd", "tdccccdt", "ttdccdtt", "tttddttt"},
    {"..pppp..", ".pqqqqp.", "pqpqqpqp", "pqqqqqqp", "pqqppqqp", "pqqqqqqp", ".pqqqqp.", "..pppp.."},
    {{{'a', 0x23395B}, {'b', 0x4F7FC0}, {'f', 0xD8D8C8}, {'h', 0xB4B4A0}, {'t', 0x7A2BA8}, {'c', 0x1FA3A3},
      {'d', 0x0B5E5E}, {'p', 0xE06A10}, {'q', 0xFFD0A0}}},
};

std::uint32_t lookup(const PaletteTable& t, char key) {
  for (const auto& s : t.colors)
    if (s.key == key) return s.rgb;
  throw std::logic_error(std::string("palette key missing: ") + key);
}

enum class Sprite { Wall, Floor, Target, Box, BoxOnTarget, Player };

const Pattern& pattern(const PaletteTable& t, Sprite s) {
  switch (s) {
    case Sprite::Wall: return t.wall;
    case Sprite::Floor: return t.floor;
    case Sprite::Target: return t.target;
    case Sprite::Box: return t.box;
    case Sprite::BoxOnTarget: return t.box_on_target;
    case Sprite::Player: return t.player;
  }
  return t.floor;
}

Sprite base_sprite(Tile t) {
  switch (t) {
    case Tile::Wall: return Sprite::Wall;
    case Tile::Target: return Sprite::Target;
    case Tile::Floor: return Sprite::Floor;
  }
  return Sprite::Floor;
}

std::uint32_t sprite_pixel(const PaletteTable& t, Sprite s, Tile under, int py, int px) {
  const char key = pattern(t, s)[static_cast<std::size_t>(py)][static_cast<std::size_t>(px)];
  if (key == '.') return lookup(t, pattern(t, base_sprite(under))[static_cast<std::size_t>(py)][static_cast<std::size_t>(px)]);
  return lookup(t, key);
}

}  // namespace

Observation render(const GameState& state, Palette palette) {
  const PaletteTable& table = palette == Palette::Base ? kBase : kGame2;
  Observation obs;
  auto put = [&](int y, int x, std::uint32_t rgb) {
    auto* p = &obs.bytes[static_cast<std::size_t>((y * kObsSize + x) * kObsChannels)];
    p[0] = static_cast<std::uint8_t>((rgb >> 16) & 0xFF);
    p[1] = static_cast<std::uint8_t>((rgb >> 8) & 0xFF);
    p[2] = static_cast<std::uint8_t>(rgb & 0xFF);
  };
  for (int y = 0; y < kObsSize; ++y) {
    for (int x = 0; x < kObsSize; ++x) {
      const int by = y - kObsPadding;
      const int bx = x - kObsPadding;
      const int py = ((by % kTilePixels) + kTilePixels) % kTilePixels;
      const int px = ((bx % kTilePixels) + kTilePixels) % kTilePixels;
      if (by < 0 || bx < 0 || by >= kBoardSize * kTilePixels || bx >= kBoardSize * kTilePixels) {
        put(y, x, sprite_pixel(table, Sprite::Wall, Tile::Wall, py, px));
        continue;
      }
      const int cell = Cell{by / kTilePixels, bx / kTilePixels}.index();
      const Tile tile = state.grid[cell];
      Sprite s = base_sprite(tile);
      if (state.boxes.contains(cell))
        s = tile == Tile::Target ? Sprite::BoxOnTarget : Sprite::Box;
      else if (cell == state.player)
        s = Sprite::Player;
      put(y, x, sprite_pixel(table, s, tile, py, px));
    }
  }
  return obs;
}

// ---- level text ----

std::string format_level(const Level& level) {
  std::string out = "; " + level.id + "\n";
  for (int r = 0; r < kBoardSize; ++r) {
    for (int c = 0; c < kBoardSize; ++c) {
      const int i = Cell{r, c}.index();
      const Tile t = level.grid[i];
      char ch = ' ';
      if (level.boxes.contains(i))
        ch = t == Tile::Target ? '*' : '$';
      else if (i == level.player)
        ch = t == Tile::Target ? '+' : '@';
      else
        ch = t == Tile::Wall ? '#' : t == Tile::Target ? '.' : ' ';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

std::string format_levels(std::span<const Level> levels) {
  std::string out;
  for (const auto& l : levels) out += format_level(l);
  return out;
}

std::vector<Level> parse_levels(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) {
      lines.push_back(text);
      break;
    }
    lines.push_back(text.substr(0, nl));
    text.remove_prefix(nl + 1);
  }

  std::vector<Level> levels;
  std::size_t i = 0;
  while (i < lines.size()) {
    const auto header = lines[i];
    if (header.size() < 2 || header.substr(0, 2) != "; ")
      throw LevelError("line " + std::to_string(i + 1) + ": expected '; <id>' header");
    Level level;
    level.id = std::string(header.substr(2));
    if (level.id.empty()) throw LevelError("line " + std::to_string(i + 1) + ": empty level id");
    if (i + kBoardSize >= lines.size())
      throw LevelError("level '" + level.id + "': truncated board");
    bool have_player = false;
    for (int r = 0; r < kBoardSize; ++r) {
      const auto row = lines[i + 1 + static_cast<std::size_t>(r)];
      if (row.size() != static_cast<std::size_t>(kBoardSize))
        throw LevelError("level '" + level.id + "': row " + std::to_string(r) + " has width " +
                         std::to_string(row.size()) + ", expected 10");
      for (int c = 0; c < kBoardSize; ++c) {
        const int idx = Cell{r, c}.index();
        Tile t = Tile::Floor;
        switch (row[static_cast<std::size_t>(c)]) {
          case '#': t = Tile::Wall; break;
          case ' ': break;
          case '.': t = Tile::Target; break;
          case '$': level.boxes.insert(idx); break;
          case '*': t = Tile::Target; level.boxes.insert(idx); break;
          case '+': t = Tile::Target; [[fallthrough]];
          case '@':
            if (have_player) throw LevelError("level '" + level.id + "': more than one player");
            level.player = idx;
            have_player = true;
            break;
          default:
            throw LevelError("level '" + level.id + "': unknown character '" +
                             std::string(1, row[static_cast<std::size_t>(c)]) + "'");
        }
        level.grid[idx] = t;
      }
    }
    if (!have_player) throw LevelError("level '" + level.id + "': no player");
    levels.push_back(std::move(level));
    i += 1 + kBoardSize;
  }
  return levels;
}

std::vector<Level> load_levels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open level file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_levels(ss.str());
}

void save_levels(const std::string& path, std::span<const Level> levels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write level file " + path);
  out << format_levels(levels);
}

}  // namespace sokotl
