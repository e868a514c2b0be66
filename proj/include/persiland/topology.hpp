#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace persiland {

/// A 1-D signal doubles as the filtering function on the cubical complex
/// whose vertices are the sample indices and whose edges join neighbors.
using Signal = std::vector<double>;

/// One connected component of the superlevel-set filtration. Components are
/// born at local maxima (high values) and die when they merge into an older
/// component at a lower value, so birth >= death always holds.
struct BirthDeathPair {
  double birth = 0.0;
  double death = 0.0;
  int birth_index = -1;  ///< vertex whose value is the birth
  int death_index = -1;  ///< vertex whose value is the death

  double persistence() const { return birth - death; }
};

/// All 0-dimensional pairs of a signal. The component of the global maximum
/// never dies in theory; it is closed off with the global minimum and stored
/// as the last element of `pairs`.
struct PersistenceDiagramD0 {
  std::vector<BirthDeathPair> pairs;
  int signal_length = 0;
};

namespace detail {

inline void check_signal(std::span<const double> signal) {
  if (signal.empty()) {
    throw std::invalid_argument("empty signal");
  }
  for (double v : signal) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("signal contains non-finite values");
    }
  }
}

inline int leftmost_minimum(std::span<const double> signal) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(signal.size()); ++i) {
    if (signal[static_cast<std::size_t>(i)] <
        signal[static_cast<std::size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

/// Elder rule: the component with the larger birth survives a merge; equal
/// births are broken toward the smaller birth index.
inline bool outlives(double birth_a, int index_a, double birth_b, int index_b) {
  if (birth_a != birth_b) return birth_a > birth_b;
  return index_a < index_b;
}

}  // namespace detail

/// Computes the 0-dimensional birth-death pairs of `signal` under the
/// superlevel-set filtration.
///
/// Distinct values are swept in descending order. At each threshold the new
/// vertices are grouped into maximal adjacent runs so that a plateau enters
/// the filtration as one unit: a run with no live neighbor is a birth (owned
/// by its leftmost vertex), a run bridging two components is a merge where
/// the elder rule decides the survivor and the dying component receives the
/// threshold as its death. The final component is paired with the global
/// minimum, attained leftmost.
inline PersistenceDiagramD0 compute_pairs(std::span<const double> signal) {
  detail::check_signal(signal);
  const int n = static_cast<int>(signal.size());

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = signal[static_cast<std::size_t>(a)];
    const double vb = signal[static_cast<std::size_t>(b)];
    if (va != vb) return va > vb;
    return a < b;
  });

  std::vector<int> parent(static_cast<std::size_t>(n), -1);  // -1: not entered
  std::vector<double> root_birth(static_cast<std::size_t>(n), 0.0);
  std::vector<int> root_birth_index(static_cast<std::size_t>(n), -1);

  auto find = [&](int x) {
    int root = x;
    while (parent[static_cast<std::size_t>(root)] != root) {
      root = parent[static_cast<std::size_t>(root)];
    }
    while (parent[static_cast<std::size_t>(x)] != x) {
      const int next = parent[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = root;
      x = next;
    }
    return root;
  };

  PersistenceDiagramD0 diagram;
  diagram.signal_length = n;

  std::size_t pos = 0;
  while (pos < order.size()) {
    // One threshold: all vertices sharing the current value, index-ascending.
    const double value = signal[static_cast<std::size_t>(order[pos])];
    std::size_t group_end = pos;
    while (group_end < order.size() &&
           signal[static_cast<std::size_t>(order[group_end])] == value) {
      ++group_end;
    }

    std::size_t run_begin = pos;
    while (run_begin < group_end) {
      std::size_t run_end = run_begin;
      while (run_end + 1 < group_end &&
             order[run_end + 1] == order[run_end] + 1) {
        ++run_end;
      }
      const int lo = order[run_begin];
      const int hi = order[run_end];

      // Enter the run as one set rooted at its leftmost vertex.
      for (int k = lo; k <= hi; ++k) {
        parent[static_cast<std::size_t>(k)] = lo;
      }
      parent[static_cast<std::size_t>(lo)] = lo;
      root_birth[static_cast<std::size_t>(lo)] = value;
      root_birth_index[static_cast<std::size_t>(lo)] = lo;

      const bool left_live = lo > 0 && parent[static_cast<std::size_t>(lo - 1)] >= 0;
      const bool right_live =
          hi + 1 < n && parent[static_cast<std::size_t>(hi + 1)] >= 0;

      if (!left_live && !right_live) {
        // Isolated run: a genuine local-maximum birth.
      } else if (left_live != right_live) {
        // The run joins one existing component; no birth, no death.
        const int root =
            find(left_live ? lo - 1 : hi + 1);
        parent[static_cast<std::size_t>(lo)] = root;
      } else {
        // Bridge: two components merge through this run.
        const int root_l = find(lo - 1);
        const int root_r = find(hi + 1);
        int winner = root_l;
        int loser = root_r;
        if (detail::outlives(root_birth[static_cast<std::size_t>(root_r)],
                             root_birth_index[static_cast<std::size_t>(root_r)],
                             root_birth[static_cast<std::size_t>(root_l)],
                             root_birth_index[static_cast<std::size_t>(root_l)])) {
          winner = root_r;
          loser = root_l;
        }
        diagram.pairs.push_back(
            BirthDeathPair{root_birth[static_cast<std::size_t>(loser)], value,
                           root_birth_index[static_cast<std::size_t>(loser)], lo});
        parent[static_cast<std::size_t>(loser)] = winner;
        parent[static_cast<std::size_t>(lo)] = winner;
      }
      run_begin = run_end + 1;
    }
    pos = group_end;
  }

  const int root = find(order.front());
  const int min_index = detail::leftmost_minimum(signal);
  diagram.pairs.push_back(BirthDeathPair{
      root_birth[static_cast<std::size_t>(root)],
      signal[static_cast<std::size_t>(min_index)],
      root_birth_index[static_cast<std::size_t>(root)], min_index});
  return diagram;
}

/// Reference implementation that materializes the superlevel set at every
/// distinct signal value, labels connected runs, and tracks labels across
/// thresholds. Quadratic; intended as an independent oracle for
/// compute_pairs on short signals.
inline PersistenceDiagramD0 brute_force_pairs(std::span<const double> signal) {
  detail::check_signal(signal);
  const int n = static_cast<int>(signal.size());

  std::vector<double> thresholds(signal.begin(), signal.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  struct Component {
    double birth = 0.0;
    int birth_index = -1;
    bool alive = false;
  };
  std::vector<Component> components;
  std::vector<int> label(static_cast<std::size_t>(n), -1);

  PersistenceDiagramD0 diagram;
  diagram.signal_length = n;

  for (const double threshold : thresholds) {
    std::vector<bool> included(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      included[static_cast<std::size_t>(i)] =
          signal[static_cast<std::size_t>(i)] >= threshold;
    }

    int i = 0;
    while (i < n) {
      if (!included[static_cast<std::size_t>(i)]) {
        ++i;
        continue;
      }
      int j = i;
      while (j + 1 < n && included[static_cast<std::size_t>(j + 1)]) ++j;

      // Labels of previously existing components inside the run, in order.
      std::vector<int> old_labels;
      for (int k = i; k <= j; ++k) {
        const int lab = label[static_cast<std::size_t>(k)];
        if (lab >= 0 &&
            std::find(old_labels.begin(), old_labels.end(), lab) ==
                old_labels.end()) {
          old_labels.push_back(lab);
        }
      }

      int survivor;
      if (old_labels.empty()) {
        // Brand-new component; every vertex of the run has the threshold
        // value, and the leftmost owns the birth.
        survivor = static_cast<int>(components.size());
        components.push_back(Component{threshold, i, true});
      } else {
        survivor = old_labels.front();
        for (const int lab : old_labels) {
          const Component& a = components[static_cast<std::size_t>(lab)];
          const Component& b = components[static_cast<std::size_t>(survivor)];
          if (detail::outlives(a.birth, a.birth_index, b.birth,
                               b.birth_index)) {
            survivor = lab;
          }
        }
        int saddle = -1;  // leftmost vertex entering at this threshold
        for (int k = i; k <= j && saddle < 0; ++k) {
          if (label[static_cast<std::size_t>(k)] < 0) saddle = k;
        }
        for (const int lab : old_labels) {
          if (lab == survivor) continue;
          Component& dying = components[static_cast<std::size_t>(lab)];
          diagram.pairs.push_back(BirthDeathPair{dying.birth, threshold,
                                                 dying.birth_index, saddle});
          dying.alive = false;
        }
      }
      for (int k = i; k <= j; ++k) {
        label[static_cast<std::size_t>(k)] = survivor;
      }
      i = j + 1;
    }
  }

  for (const Component& component : components) {
    if (component.alive) {
      const int min_index = detail::leftmost_minimum(signal);
      diagram.pairs.push_back(
          BirthDeathPair{component.birth, signal[static_cast<std::size_t>(min_index)],
                         component.birth_index, min_index});
    }
  }
  return diagram;
}

/// Counts local-maximum plateau runs: maximal runs of equal values that are
/// strictly above both neighboring values (or at the signal boundary). The
/// pair count of a diagram equals this number.
inline int count_local_max_runs(std::span<const double> signal) {
  const int n = static_cast<int>(signal.size());
  int count = 0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && signal[static_cast<std::size_t>(j + 1)] ==
                            signal[static_cast<std::size_t>(i)]) {
      ++j;
    }
    const bool left_ok =
        i == 0 || signal[static_cast<std::size_t>(i - 1)] <
                      signal[static_cast<std::size_t>(i)];
    const bool right_ok =
        j == n - 1 || signal[static_cast<std::size_t>(j + 1)] <
                          signal[static_cast<std::size_t>(i)];
    if (left_ok && right_ok) ++count;
    i = j + 1;
  }
  return count;
}

}  // namespace persiland
