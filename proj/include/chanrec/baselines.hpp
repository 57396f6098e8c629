#pragma once

#include "chanrec/core.hpp"

#include <functional>
#include <vector>

namespace chanrec::baselines {

// Relevance/diversity trade-offs for the greedy selectors.
struct GreedyConfig {
  double lambda = 0.7;  // MMR: relevance weight in [0,1]
  double gamma = 0.5;   // MSD: weight on the summed pairwise distance, >= 0

  void validate() const;
};

// Candidates are addressed by index; `item_id` only breaks ties.
struct Candidate {
  int index = 0;    // caller's handle (column in a score matrix, etc.)
  int item_id = 0;  // stable identity for deterministic tie-breaks
  double relevance = 0.0;
};

using SimilarityFn = std::function<double(int a_index, int b_index)>;

// Greedy maximal marginal relevance: the first pick is the pure relevance
// argmax; afterwards argmax of
//   lambda * rel(j) - (1 - lambda) * max_{s selected} sim(j, s).
// Ties break toward higher relevance, then smaller item_id. Returns
// candidate indices in pick order.
std::vector<int> mmr_select(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                            double lambda, int k);

// Greedy max-sum diversification: each step adds the largest marginal gain
//   rel(j) + gamma * sum_{s selected} (1 - sim(j, s)).
std::vector<int> msd_select(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                            double gamma, int k);

// Objective value of a selected subset under the MSD objective.
double msd_objective(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                     double gamma, const std::vector<int>& selected);

enum class GreedyMethod { Mmr, Msd };

// Fills channels in channel-id order, running the selector over the
// candidates not yet used by an earlier channel; relevance for channel i is
// row i of the score matrix. Candidate j's item_id is item_ids[j].
Page channelwise_baseline_page(const Matrix& scores, const std::vector<int>& capacities,
                               const std::vector<int>& item_ids, const SimilarityFn& sim,
                               GreedyMethod method, const GreedyConfig& config);

}  // namespace chanrec::baselines
