#include "latent/maze.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <sstream>

namespace latent {
namespace {

constexpr std::uint64_t kMazeStream = 0x6d617a65;  // "maze"

std::pair<StateId, StateId> edge_key(StateId a, StateId b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

Cell offset(Cell c, Action a) {
  switch (a) {
    case Action::kUp: return {c.x, c.y - 1};
    case Action::kDown: return {c.x, c.y + 1};
    case Action::kLeft: return {c.x - 1, c.y};
    case Action::kRight: return {c.x + 1, c.y};
    case Action::kStay: return c;
  }
  return c;
}

// BFS distances from `origin` over a width x height grid with the given walls.
std::vector<int> bfs(int width, int height, const std::set<std::pair<StateId, StateId>>& walls, Cell origin) {
  std::vector<int> dist(static_cast<std::size_t>(width * height), -1);
  auto id = [width](Cell c) { return static_cast<StateId>(c.y) * width + c.x; };
  std::deque<Cell> frontier{origin};
  dist[static_cast<std::size_t>(id(origin))] = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < 4; ++a) {
      const Cell n = offset(c, static_cast<Action>(a));
      if (n.x < 0 || n.y < 0 || n.x >= width || n.y >= height) continue;
      if (walls.count(edge_key(id(c), id(n))) != 0) continue;
      auto& d = dist[static_cast<std::size_t>(id(n))];
      if (d >= 0) continue;
      d = dist[static_cast<std::size_t>(id(c))] + 1;
      frontier.push_back(n);
    }
  }
  return dist;
}

std::string describe(Cell c) {
  std::ostringstream os;
  os << "(" << c.x << ", " << c.y << ")";
  return os.str();
}

}  // namespace

const char* to_string(Action a) {
  switch (a) {
    case Action::kUp: return "up";
    case Action::kDown: return "down";
    case Action::kLeft: return "left";
    case Action::kRight: return "right";
    case Action::kStay: return "stay";
  }
  return "unknown";
}

MazeSpec default_maze_spec() {
  MazeSpec spec;
  spec.width = 8;
  spec.height = 8;
  spec.generation_seed = 7;
  spec.wall_fraction = 0.2;
  spec.start = {0, 0};
  spec.goal = {7, 7};
  spec.max_steps = 128;
  return spec;
}

bool Maze::blocked(Cell a, Cell b) const { return walls_.count(edge_key(state_of(a), state_of(b))) != 0; }

Maze build_maze(const MazeSpec& spec) {
  if (spec.width < 2 || spec.height < 2) throw Error(Errc::kInvalidArgument, "maze dimensions must be at least 2");
  if (spec.max_steps < 1) throw Error(Errc::kInvalidArgument, "max_steps must be positive");
  Maze maze;
  maze.width_ = spec.width;
  maze.height_ = spec.height;
  maze.start_ = spec.start;
  maze.goal_ = spec.goal;
  maze.max_steps_ = spec.max_steps;
  if (!maze.in_bounds(spec.start)) throw Error(Errc::kInvalidArgument, "start " + describe(spec.start) + " out of range");
  if (!maze.in_bounds(spec.goal)) throw Error(Errc::kInvalidArgument, "goal " + describe(spec.goal) + " out of range");
  if (spec.start == spec.goal) throw Error(Errc::kInvalidArgument, "start and goal coincide");

  for (const Wall& w : spec.walls) {
    if (!maze.in_bounds(w.a) || !maze.in_bounds(w.b)) {
      throw Error(Errc::kInvalidArgument, "wall " + describe(w.a) + "-" + describe(w.b) + " out of range");
    }
    if (std::abs(w.a.x - w.b.x) + std::abs(w.a.y - w.b.y) != 1) {
      throw Error(Errc::kInvalidArgument, "wall " + describe(w.a) + "-" + describe(w.b) + " joins non-adjacent cells");
    }
    maze.walls_.insert(edge_key(maze.state_of(w.a), maze.state_of(w.b)));
  }

  if (spec.generation_seed) {
    std::vector<std::pair<StateId, StateId>> edges;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const StateId s = maze.state_of({x, y});
        if (x + 1 < spec.width) edges.push_back(edge_key(s, maze.state_of({x + 1, y})));
        if (y + 1 < spec.height) edges.push_back(edge_key(s, maze.state_of({x, y + 1})));
      }
    }
    std::mt19937_64 rng(mix_seed(*spec.generation_seed, kMazeStream));
    std::shuffle(edges.begin(), edges.end(), rng);
    const auto attempts = static_cast<std::size_t>(std::lround(spec.wall_fraction * static_cast<double>(edges.size())));
    const int cells = spec.width * spec.height;
    for (std::size_t k = 0; k < std::min(attempts, edges.size()); ++k) {
      if (maze.walls_.count(edges[k]) != 0) continue;
      maze.walls_.insert(edges[k]);
      const auto dist = bfs(spec.width, spec.height, maze.walls_, spec.goal);
      // Keep every cell reachable so the distance field is defined everywhere.
      if (std::count(dist.begin(), dist.end(), -1) != 0 || static_cast<int>(dist.size()) != cells) {
        maze.walls_.erase(edges[k]);
      }
    }
  }

  maze.distance_ = bfs(spec.width, spec.height, maze.walls_, spec.goal);
  if (maze.distance(spec.start) < 0) throw Error(Errc::kInvalidArgument, "goal is unreachable from start");
  return maze;
}

Cell step(const Maze& maze, Cell cell, Action action) {
  const Cell next = offset(cell, action);
  if (!maze.in_bounds(next) || next == cell) return cell;
  if (maze.blocked(cell, next)) return cell;
  return next;
}

Trajectory rollout(const Maze& maze, const TabularPolicy& policy, std::uint64_t seed) {
  if (policy.num_actions() != kNumActions) {
    throw Error(Errc::kInvalidArgument, "policy alphabet does not match the maze actions");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Trajectory traj;
  Cell cell = maze.start();
  while (traj.length() < maze.max_steps()) {
    const StateId s = maze.state_of(cell);
    const Vector probs = policy.action_prob_vector(s);
    const double draw = uniform(rng);
    int action = kNumActions - 1;
    double cumulative = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      cumulative += probs[a];
      if (draw < cumulative) {
        action = a;
        break;
      }
    }
    // Guard against landing on a zero-probability tail entry through round-off.
    while (probs[action] <= 0.0 && action > 0) --action;
    traj.states.push_back(s);
    traj.actions.push_back(action);
    traj.behavior_probs.push_back(probs[action]);
    cell = step(maze, cell, static_cast<Action>(action));
    if (cell == maze.goal()) {
      traj.reached_goal = true;
      break;
    }
  }
  traj.final_state = maze.state_of(cell);
  return traj;
}

double accuracy_reward(const Trajectory& trajectory) { return trajectory.reached_goal ? 1.0 : 0.0; }

double latent_utility(const Maze& maze, Cell cell, Action action) {
  const int here = maze.distance(cell);
  const int there = maze.distance(step(maze, cell, action));
  if (here < 0 || there < 0) return 0.0;
  return static_cast<double>(here - there);
}

Vector latent_utility_row(const Maze& maze, Cell cell) {
  Vector u(kNumActions);
  for (int a = 0; a < kNumActions; ++a) u[a] = latent_utility(maze, cell, static_cast<Action>(a));
  return u;
}

}  // namespace latent
