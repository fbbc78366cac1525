#include "pgqa/taxonomy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pgqa/error.hpp"
#include "pgqa/random.hpp"

namespace pgqa::taxonomy {

Taxonomy::Taxonomy(std::map<std::string, std::optional<std::string>> parents)
    : parents_(std::move(parents)) {}

std::string Taxonomy::root_of(const std::string& label) const {
  std::string current = label;
  std::set<std::string> seen{current};
  for (;;) {
    auto it = parents_.find(current);
    if (it == parents_.end() || !it->second || it->second->empty()) return current;
    current = *it->second;
    if (!seen.insert(current).second)
      throw ValidationError("taxonomy cycle through label '" + current + "'");
  }
}

namespace {

void check_unit(std::span<const double> v, const std::string& what) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
    throw ValidationError(what + " is not unit norm (|v| = " + std::to_string(std::sqrt(sq)) + ")");
}

}  // namespace

TagPrediction tag_page(const std::string& doc_id, std::span<const double> page_embedding,
                       const std::map<std::string, std::vector<double>>& label_embeddings,
                       const Taxonomy& taxonomy, std::size_t top_n) {
  if (label_embeddings.empty()) throw ValidationError("no candidate labels");
  check_unit(page_embedding, "page embedding of " + doc_id);
  std::vector<LabelScore> scores;
  scores.reserve(label_embeddings.size());
  for (const auto& [label, vec] : label_embeddings) {
    if (vec.size() != page_embedding.size())
      throw ValidationError("label '" + label + "' has dimension " + std::to_string(vec.size()) +
                            ", page has " + std::to_string(page_embedding.size()));
    check_unit(vec, "label '" + label + "'");
    double dot = 0.0;
    for (std::size_t i = 0; i < vec.size(); ++i) dot += vec[i] * page_embedding[i];
    scores.push_back({label, dot});
  }
  const std::size_t keep = std::min(top_n, scores.size());
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(keep),
                    scores.end(), [](const LabelScore& a, const LabelScore& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.label < b.label;
                    });
  scores.resize(keep);

  TagPrediction out;
  out.doc_id = doc_id;
  out.incomplete = keep < top_n;
  out.cluster = taxonomy.root_of(scores.front().label);
  out.ranked_labels = std::move(scores);
  return out;
}

ClusterSelection select_top_clusters(const std::map<std::string, std::size_t>& counts,
                                     std::size_t k) {
  if (k == 0) throw ValidationError("K must be >= 1");
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ClusterSelection out;
  out.truncated = k > items.size();
  for (std::size_t i = 0; i < std::min(k, items.size()); ++i) out.clusters.push_back(items[i].first);
  return out;
}

int page_bucket(int page_count) {
  if (page_count <= 1) return 0;
  if (page_count == 2) return 1;
  if (page_count <= 5) return 2;
  if (page_count <= 10) return 3;
  if (page_count <= 20) return 4;
  if (page_count <= 50) return 5;
  if (page_count <= 100) return 6;
  return 7;
}

std::string page_bucket_label(int bucket) {
  static const char* const labels[kPageBuckets] = {"1",     "2",     "3-5",    "6-10",
                                                   "11-20", "21-50", "51-100", ">100"};
  if (bucket < 0 || bucket >= kPageBuckets) throw ValidationError("bad page bucket");
  return labels[bucket];
}

void SamplingPlan::validate() const {
  if (k == 0) throw ValidationError("sampling plan: K must be >= 1");
  if (per_cluster_quota == 0) throw ValidationError("sampling plan: quota must be >= 1");
  if (!strata.empty()) {
    std::size_t sum = 0;
    std::set<StratumKey> keys;
    for (const auto& s : strata) {
      sum += s.target;
      if (!keys.insert(s.key).second) throw ValidationError("sampling plan: duplicate stratum");
    }
    if (sum != per_cluster_quota)
      throw ValidationError("sampling plan: stratum targets sum to " + std::to_string(sum) +
                            ", quota is " + std::to_string(per_cluster_quota));
  }
}

SamplingPlan SamplingPlan::reference_train(std::uint64_t seed) { return {20, 20000, {}, seed}; }
SamplingPlan SamplingPlan::reference_test(std::uint64_t seed) { return {20, 500, {}, seed}; }

std::vector<std::size_t> allocate_quota(std::size_t quota, const std::vector<double>& weights,
                                        const std::vector<std::size_t>& capacity) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> target(n, 0);
  std::vector<bool> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = capacity[i] > 0;
  std::size_t remaining = quota;

  while (remaining > 0) {
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < n; ++i)
      if (active[i]) live.push_back(i);
    if (live.empty()) break;
    double total_w = 0.0;
    for (std::size_t i : live) total_w += weights[i];
    std::vector<double> w(n, 0.0);
    for (std::size_t i : live) w[i] = total_w > 0.0 ? weights[i] / total_w : 1.0 / live.size();

    // Largest-remainder rounding of remaining * w.
    std::vector<std::size_t> share(n, 0);
    std::vector<std::pair<double, std::size_t>> fractions;
    std::size_t assigned = 0;
    for (std::size_t i : live) {
      const double exact = static_cast<double>(remaining) * w[i];
      share[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      assigned += share[i];
      fractions.emplace_back(exact - static_cast<double>(share[i]), i);
    }
    std::stable_sort(fractions.begin(), fractions.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < remaining && r < fractions.size(); ++r, ++assigned)
      ++share[fractions[r].second];

    bool capped = false;
    for (std::size_t i : live) {
      const std::size_t room = capacity[i] - target[i];
      if (share[i] >= room) {
        target[i] = capacity[i];
        active[i] = false;
        capped = capped || share[i] > room;
      } else {
        target[i] += share[i];
      }
    }
    std::size_t total = std::accumulate(target.begin(), target.end(), std::size_t{0});
    remaining = quota - total;
    if (!capped) break;
  }
  return target;
}

SampleResult balanced_sample(const std::vector<DocEntry>& docs, const SamplingPlan& plan,
                             const std::set<std::string>& exclude) {
  plan.validate();
  std::map<std::string, std::size_t> counts;
  std::set<std::string> ids;
  for (const auto& d : docs) {
    if (!ids.insert(d.doc_id).second) throw ValidationError("duplicate doc_id " + d.doc_id);
    ++counts[d.cluster];
  }

  SampleResult out;
  const ClusterSelection sel = select_top_clusters(counts, plan.k);
  out.clusters = sel.clusters;
  out.clusters_truncated = sel.truncated;

  for (const std::string& cluster : sel.clusters) {
    std::map<StratumKey, std::vector<std::string>> pools;
    for (const auto& d : docs)
      if (d.cluster == cluster && !exclude.count(d.doc_id))
        pools[{d.sub_label, page_bucket(d.page_count)}].push_back(d.doc_id);

    std::vector<StratumKey> keys;
    std::vector<double> weights;
    std::vector<std::size_t> capacity;
    if (plan.strata.empty()) {
      for (const auto& [key, pool] : pools) {
        keys.push_back(key);
        weights.push_back(1.0);
        capacity.push_back(pool.size());
      }
    } else {
      for (const auto& st : plan.strata) {
        keys.push_back(st.key);
        weights.push_back(static_cast<double>(st.target));
        auto it = pools.find(st.key);
        const std::size_t cap = it == pools.end() ? 0 : it->second.size();
        capacity.push_back(cap);
        if (cap < st.target)
          out.log.push_back(cluster + ": stratum (" + st.key.sub_label + ", " +
                            page_bucket_label(st.key.bucket) + ") has " + std::to_string(cap) +
                            " of " + std::to_string(st.target) + " documents; redistributing");
      }
    }

    const std::vector<std::size_t> targets = allocate_quota(plan.per_cluster_quota, weights, capacity);
    const std::size_t drawn = std::accumulate(targets.begin(), targets.end(), std::size_t{0});
    if (drawn < plan.per_cluster_quota) {
      out.shrunk = true;
      out.log.push_back(cluster + ": only " + std::to_string(drawn) + " eligible documents for quota " +
                        std::to_string(plan.per_cluster_quota));
    }

    for (std::size_t s = 0; s < keys.size(); ++s) {
      if (targets[s] == 0) continue;
      std::vector<std::string> pool = pools[keys[s]];
      std::sort(pool.begin(), pool.end());
      Rng rng(derive_seed(plan.seed, cluster + "\x1f" + keys[s].sub_label + "\x1f" +
                                         std::to_string(keys[s].bucket)));
      rng.shuffle(pool);
      out.doc_ids.insert(out.doc_ids.end(), pool.begin(),
                         pool.begin() + static_cast<std::ptrdiff_t>(targets[s]));
      out.realized[cluster][keys[s]] = targets[s];
    }
  }
  return out;
}

SplitResult train_test_split(const std::vector<DocEntry>& docs, const SamplingPlan& train_plan,
                             const SamplingPlan& test_plan) {
  SplitResult out;
  out.train = balanced_sample(docs, train_plan);
  const std::set<std::string> taken(out.train.doc_ids.begin(), out.train.doc_ids.end());
  out.test = balanced_sample(docs, test_plan, taken);
  return out;
}

}  // namespace pgqa::taxonomy
