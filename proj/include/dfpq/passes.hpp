#pragma once

#include <map>
#include <string>

#include "dfpq/graph.hpp"

namespace dfpq {

// Graph-preprocessing pipeline, applied in this order:
//   merge_fork_join -> fold_linear -> splice_identity_downscale
//   -> (threshold calibration) -> assign_downscale_factors -> splice_out_unity
// Every pass preserves float-reference semantics and is idempotent.

// Collapses chains of adjacent same-axis concat nodes into a single concat;
// mixed-axis chains are left untouched.
void merge_fork_join(Graph& g);

// Folds batch-norm / scale / bias nodes into neighbouring convolution or
// inner-product weights by exact affine composition. Adjacent affine nodes
// compose with each other first; an affine with no foldable neighbour is
// materialized as an identity convolution (rank-3 activations) or identity
// inner product (rank-1). Throws when a batch-norm channel has non-positive
// variance plus epsilon, naming the channel.
void fold_linear(Graph& g);

// Inserts a factor-1 IdentityDownscale on every join (EltwiseAdd/Concat)
// input whose upstream path back to the nearest fork lacks a node that can
// absorb a rescale (convolution, inner product, average pool, or an existing
// IdentityDownscale).
void splice_identity_downscale(Graph& g);

// Sets every IdentityDownscale factor to min(1, join threshold / branch
// threshold) so no join input carries a larger scale than the join output.
// `thresholds` maps tensor id -> calibrated threshold; missing entries for
// the downscale input or the join output throw.
void assign_downscale_factors(Graph& g, const std::map<std::string, double>& thresholds);

// Removes every IdentityDownscale whose factor is exactly 1, rewiring its
// consumers to its input tensor.
void splice_out_unity(Graph& g);

}  // namespace dfpq
