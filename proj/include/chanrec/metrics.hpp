#pragma once

#include "chanrec/core.hpp"
#include "chanrec/rng.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace chanrec::metrics {

// Aggregate with a normal-approximation 95% confidence interval.
struct MetricValue {
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  long n = 0;
  long excluded = 0;
};

MetricValue mean_with_ci(const std::vector<double>& samples, long excluded = 0);
MetricValue binomial_ci(long successes, long trials);

// Page-level precision: mean over requests of |clicked| / |shown|. Requests
// with nothing shown are excluded and counted.
struct RequestCounts {
  long shown = 0;
  long clicked = 0;
};
MetricValue precision(const std::vector<RequestCounts>& requests);

// Channel-wise precision at k over ordered click-indicator lists, one per
// request. Lists shorter than k are excluded and counted.
MetricValue precision_at_k(const std::vector<std::vector<char>>& indicator_lists, int k);

// Sampled IPV/PV under a click model. The probability callback sees the
// request index, the page, and the (channel_id, position) pair; clicks are
// drawn Bernoulli per position from `rng`.
struct SimulatedCtr {
  MetricValue total;
  std::vector<std::pair<int, MetricValue>> per_channel;  // keyed by channel_id
};
SimulatedCtr simulated_ctr(
    const std::vector<Page>& pages,
    const std::function<double(std::size_t request, const Page& page, int channel_id,
                               int position)>& click_prob,
    Rng& rng);

// Paired mean-difference test over per-request samples.
struct PairedDiff {
  double mean = 0.0;
  double se = 0.0;
  double z = 0.0;  // 0 when every pair is identical
  long n = 0;
};
PairedDiff paired_diff(const std::vector<double>& a, const std::vector<double>& b);

// Report rows in the shared CSV schema.
struct ReportRow {
  std::string method;
  std::string channel;  // "total" or a channel id
  std::string metric;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  long n = 0;
};

void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

}  // namespace chanrec::metrics
