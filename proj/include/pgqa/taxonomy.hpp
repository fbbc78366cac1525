#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pgqa::taxonomy {

struct LabelScore {
  std::string label;
  double similarity = 0.0;

  friend bool operator==(const LabelScore&, const LabelScore&) = default;
};

struct TagPrediction {
  std::string doc_id;
  std::vector<LabelScore> ranked_labels;  ///< similarity descending, label ascending on ties
  std::string cluster;                    ///< top-level ancestor of the rank-1 label
  bool incomplete = false;                ///< fewer candidate labels than requested
};

/// Label hierarchy given as child -> parent links. Roots have no parent.
class Taxonomy {
 public:
  Taxonomy() = default;
  explicit Taxonomy(std::map<std::string, std::optional<std::string>> parents);

  /// Follows parent links to the root. Labels absent from the tree are their own root.
  /// Throws ValidationError on a cycle.
  std::string root_of(const std::string& label) const;

 private:
  std::map<std::string, std::optional<std::string>> parents_;
};

inline constexpr std::size_t kTopLabels = 5;

/// Ranks labels by cosine similarity to the page embedding. All vectors must share
/// one dimension and have unit norm within 1e-6.
TagPrediction tag_page(const std::string& doc_id, std::span<const double> page_embedding,
                       const std::map<std::string, std::vector<double>>& label_embeddings,
                       const Taxonomy& taxonomy, std::size_t top_n = kTopLabels);

struct ClusterSelection {
  std::vector<std::string> clusters;
  bool truncated = false;  ///< K exceeded the number of clusters
};

/// Top-K clusters by count, ties broken lexicographically.
ClusterSelection select_top_clusters(const std::map<std::string, std::size_t>& counts,
                                     std::size_t k);

/// Page-count buckets: 1, 2, 3-5, 6-10, 11-20, 21-50, 51-100, >100.
inline constexpr int kPageBuckets = 8;
int page_bucket(int page_count);
std::string page_bucket_label(int bucket);

/// Documents longer than ten pages feed multi-hop generation.
inline bool multi_hop_eligible(int page_count) { return page_count > 10; }

struct DocEntry {
  std::string doc_id;
  std::string cluster;
  std::string sub_label;
  int page_count = 0;
};

struct StratumKey {
  std::string sub_label;
  int bucket = 0;

  auto operator<=>(const StratumKey&) const = default;
  bool operator==(const StratumKey&) const = default;
};

struct StratumTarget {
  StratumKey key;
  std::size_t target = 0;
};

struct SamplingPlan {
  std::size_t k = 20;
  std::size_t per_cluster_quota = 0;
  /// Explicit per-stratum targets applied to every cluster. Empty means an even
  /// split across the strata present in each cluster.
  std::vector<StratumTarget> strata;
  std::uint64_t seed = 0;

  void validate() const;

  static SamplingPlan reference_train(std::uint64_t seed);  ///< 20 clusters x 20,000
  static SamplingPlan reference_test(std::uint64_t seed);   ///< 20 clusters x 500
};

struct SampleResult {
  std::vector<std::string> doc_ids;
  std::vector<std::string> clusters;
  bool clusters_truncated = false;
  bool shrunk = false;  ///< some cluster had fewer eligible documents than its quota
  std::map<std::string, std::map<StratumKey, std::size_t>> realized;
  std::vector<std::string> log;
};

/// Splits `quota` across strata proportionally to `weights`, never exceeding
/// `capacity`; capped excess is redistributed over the remaining strata. Ties in
/// rounding go to the earlier stratum.
std::vector<std::size_t> allocate_quota(std::size_t quota, const std::vector<double>& weights,
                                        const std::vector<std::size_t>& capacity);

/// Stratified, seeded draw. Cluster selection uses every entry in `docs`;
/// ids in `exclude` are then removed from the candidate pools.
SampleResult balanced_sample(const std::vector<DocEntry>& docs, const SamplingPlan& plan,
                             const std::set<std::string>& exclude = {});

struct SplitResult {
  SampleResult train;
  SampleResult test;
};

/// Draws train first, then test from what remains, so the two never intersect.
SplitResult train_test_split(const std::vector<DocEntry>& docs, const SamplingPlan& train_plan,
                             const SamplingPlan& test_plan);

}  // namespace pgqa::taxonomy
