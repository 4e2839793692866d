#pragma once

#include <string>
#include <vector>

#include "nlens/datasets.hpp"
#include "nlens/tokenizer.hpp"
#include "nlens/weights.hpp"

namespace nlens {

struct PairScore {
  double male = 0.0;    // char-normalized entropy, averaged over renderings
  double female = 0.0;
  bool ok = true;
  std::string error;
};

struct CategoryMetrics {
  std::string category;
  size_t n_pairs = 0;
  double mean_abs_entropy_diff = 0.0;
  double signed_mean_entropy_diff = 0.0;  // mean of H(male) - H(female)
  double proportion_male_lower = 0.0;     // percent, ties count half
};

struct BiasMetrics {
  CategoryMetrics overall;
  std::vector<CategoryMetrics> per_category;  // in order of first appearance
  size_t n_excluded = 0;
  std::vector<PairScore> pairs;
};

struct StereoMetrics {
  double lms = 0.0;
  double ss = 0.0;
  double icat = 0.0;
  size_t n_cases = 0;
  size_t n_excluded = 0;
};

struct AccuracyResult {
  double accuracy = 0.0;  // percent
  size_t n_cases = 0;
  size_t correct = 0;
  size_t ties = 0;
};

// LMS * min(SS, 100 - SS) / 50
double icat(double lms, double ss);

PairScore score_pair(const TransformerWeights& weights, const Tokenizer& tokenizer, const PairedCase& pair);

BiasMetrics entropy_difference_eval(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                    const std::vector<PairedCase>& pairs);
// Builds metrics from precomputed pair scores.
BiasMetrics summarize_pairs(const std::vector<PairedCase>& pairs, std::vector<PairScore> scores);

// Mean absolute entropy difference over the pairs.
double winogender_eval(const TransformerWeights& weights, const Tokenizer& tokenizer,
                       const std::vector<PairedCase>& pairs);

StereoMetrics stereoset_eval(const TransformerWeights& weights, const Tokenizer& tokenizer,
                             const std::vector<StereoCase>& cases);

AccuracyResult mcq_accuracy(const TransformerWeights& weights, const Tokenizer& tokenizer,
                            const std::vector<TaskCase>& cases);
AccuracyResult arithmetic_accuracy(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                   const std::vector<TaskCase>& cases);
// Mixed mcq + arithmetic probe, scored per case.
AccuracyResult task_accuracy(const TransformerWeights& weights, const Tokenizer& tokenizer,
                             const std::vector<TaskCase>& cases);

}  // namespace nlens
