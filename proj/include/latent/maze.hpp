#ifndef LATENT_MAZE_HPP_
#define LATENT_MAZE_HPP_

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "latent/grpo.hpp"

namespace latent {

/// Action alphabet. `up` decreases y, `right` increases x.
enum class Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr int kNumActions = 5;

const char* to_string(Action a);

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// A blocked edge between two 4-adjacent cells.
struct Wall {
  Cell a;
  Cell b;
};

struct MazeSpec {
  int width = 8;
  int height = 8;
  std::vector<Wall> walls;
  /// When set, additional walls are generated; the grid stays connected.
  std::optional<std::uint64_t> generation_seed;
  /// Fraction of interior edges the generator attempts to wall off.
  double wall_fraction = 0.2;
  Cell start{0, 0};
  Cell goal{7, 7};
  int max_steps = 128;
};

/// The 8x8 maze used by the default experiment configuration.
MazeSpec default_maze_spec();

class Maze {
 public:
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  Cell start() const noexcept { return start_; }
  Cell goal() const noexcept { return goal_; }
  int max_steps() const noexcept { return max_steps_; }
  int num_cells() const noexcept { return width_ * height_; }

  bool in_bounds(Cell c) const noexcept { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  StateId state_of(Cell c) const noexcept { return static_cast<StateId>(c.y) * width_ + c.x; }
  Cell cell_of(StateId s) const noexcept {
    return {static_cast<int>(s % width_), static_cast<int>(s / width_)};
  }
  bool blocked(Cell a, Cell b) const;
  /// Walls as (state, state) pairs with first < second.
  const std::set<std::pair<StateId, StateId>>& walls() const noexcept { return walls_; }

  /// Shortest-path distance to the goal; -1 for cells cut off from it.
  int distance(Cell c) const { return distance_[static_cast<std::size_t>(state_of(c))]; }
  const std::vector<int>& distance_field() const noexcept { return distance_; }

 private:
  friend Maze build_maze(const MazeSpec& spec);
  Maze() = default;

  int width_ = 0;
  int height_ = 0;
  Cell start_;
  Cell goal_;
  int max_steps_ = 0;
  std::set<std::pair<StateId, StateId>> walls_;
  std::vector<int> distance_;
};

/// Validates and builds a maze. Throws on bad dimensions, out-of-range cells,
/// non-adjacent walls, start == goal, or a goal unreachable from the start.
Maze build_maze(const MazeSpec& spec);

/// Deterministic dynamics: walls and boundaries leave the cell unchanged.
Cell step(const Maze& maze, Cell cell, Action action);

struct Trajectory {
  /// State each action was taken from.
  std::vector<StateId> states;
  std::vector<int> actions;
  std::vector<double> behavior_probs;
  StateId final_state = 0;
  bool reached_goal = false;

  int length() const noexcept { return static_cast<int>(actions.size()); }
};

/// Samples actions from the policy until the goal or max_steps.
Trajectory rollout(const Maze& maze, const TabularPolicy& policy, std::uint64_t seed);

/// 1 if the goal was reached (arrival on the final step counts), else 0.
double accuracy_reward(const Trajectory& trajectory);

/// Decrease in goal distance achieved by the action: +1, 0 or -1.
double latent_utility(const Maze& maze, Cell cell, Action action);

/// u* over the alphabet at one cell.
Vector latent_utility_row(const Maze& maze, Cell cell);

}  // namespace latent

#endif  // LATENT_MAZE_HPP_
