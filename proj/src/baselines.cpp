#include "chanrec/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace chanrec::baselines {

void GreedyConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("greedy: lambda must be in [0,1]");
  if (gamma < 0.0) throw ConfigError("greedy: gamma must be >= 0");
}

namespace {

// Greedy loop shared by both selectors; `marginal` scores an unselected
// candidate against the current selection.
std::vector<int> greedy_select(
    const std::vector<Candidate>& candidates, int k,
    const std::function<double(const Candidate&, const std::vector<int>&)>& marginal) {
  if (k > static_cast<int>(candidates.size()))
    throw DataError("greedy selection: k exceeds candidate count");
  std::vector<int> selected;
  std::vector<bool> used(candidates.size(), false);
  while (static_cast<int>(selected.size()) < k) {
    int best = -1;
    double best_score = 0.0;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (used[j]) continue;
      const double score = marginal(candidates[j], selected);
      bool take = best < 0 || score > best_score + 1e-12;
      if (!take && best >= 0 && score >= best_score - 1e-12) {
        const Candidate& cur = candidates[j];
        const Candidate& prev = candidates[static_cast<std::size_t>(best)];
        take = cur.relevance > prev.relevance + 1e-12 ||
               (std::abs(cur.relevance - prev.relevance) <= 1e-12 &&
                cur.item_id < prev.item_id);
      }
      if (take) {
        best = static_cast<int>(j);
        best_score = score;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    selected.push_back(candidates[static_cast<std::size_t>(best)].index);
  }
  return selected;
}

}  // namespace

std::vector<int> mmr_select(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                            double lambda, int k) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("mmr: lambda must be in [0,1]");
  return greedy_select(
      candidates, k,
      [&](const Candidate& c, const std::vector<int>& selected) {
        if (selected.empty()) return c.relevance;  // first pick: pure relevance
        double worst = 0.0;
        for (const int s : selected) worst = std::max(worst, sim(c.index, s));
        return lambda * c.relevance - (1.0 - lambda) * worst;
      });
}

std::vector<int> msd_select(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                            double gamma, int k) {
  if (gamma < 0.0) throw ConfigError("msd: gamma must be >= 0");
  return greedy_select(
      candidates, k,
      [&](const Candidate& c, const std::vector<int>& selected) {
        double gain = c.relevance;
        for (const int s : selected) gain += gamma * (1.0 - sim(c.index, s));
        return gain;
      });
}

double msd_objective(const std::vector<Candidate>& candidates, const SimilarityFn& sim,
                     double gamma, const std::vector<int>& selected) {
  double relevance = 0.0;
  for (const int s : selected) {
    for (const Candidate& c : candidates)
      if (c.index == s) relevance += c.relevance;
  }
  double distance = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i)
    for (std::size_t j = i + 1; j < selected.size(); ++j)
      distance += 1.0 - sim(selected[i], selected[j]);
  return relevance + gamma * distance;
}

Page channelwise_baseline_page(const Matrix& scores, const std::vector<int>& capacities,
                               const std::vector<int>& item_ids, const SimilarityFn& sim,
                               GreedyMethod method, const GreedyConfig& config) {
  config.validate();
  const int channels = static_cast<int>(scores.rows());
  const int n = static_cast<int>(scores.cols());
  if (static_cast<int>(capacities.size()) != channels)
    throw DimensionError("baseline page: capacities size mismatch");
  if (static_cast<int>(item_ids.size()) != n)
    throw DimensionError("baseline page: item_ids size mismatch");

  int needed = 0;
  for (const int v : capacities) needed += v;
  if (needed > n) throw DataError("baseline page: not enough candidates");

  Page page;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int i = 0; i < channels; ++i) {
    std::vector<Candidate> pool;
    for (int j = 0; j < n; ++j)
      if (!used[static_cast<std::size_t>(j)])
        pool.push_back({j, item_ids[static_cast<std::size_t>(j)], scores(i, j)});
    const std::vector<int> picked =
        method == GreedyMethod::Mmr
            ? mmr_select(pool, sim, config.lambda, capacities[static_cast<std::size_t>(i)])
            : msd_select(pool, sim, config.gamma, capacities[static_cast<std::size_t>(i)]);
    ChannelList list;
    list.channel_id = i;
    for (const int j : picked) {
      used[static_cast<std::size_t>(j)] = true;
      list.items.push_back(item_ids[static_cast<std::size_t>(j)]);
    }
    page.channels.push_back(std::move(list));
  }
  return page;
}

}  // namespace chanrec::baselines
