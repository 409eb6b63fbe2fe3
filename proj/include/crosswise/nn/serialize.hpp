#pragma once

#include <string>

#include "crosswise/nn/model.hpp"

namespace crosswise::nn {

// Weight file, versioned JSON:
//   {"version":1, "layout_hash":str, "dtype":"f32"|"f64",
//    "config":{d_in,d_h,n_heads,d_ff,d_fc,dropout,pooling},
//    "tensors":{name:{"shape":[rows,cols],"data":[row-major values]}}}
// Values are written with round-trip precision, so save/load/save is
// byte-identical for both precisions.

template <class S>
std::string weights_to_json(const ModelParams<S>& p);

/// Reads either precision and converts to S. Throws std::invalid_argument on
/// schema violations or shape mismatches.
template <class S>
ModelParams<S> weights_from_json(const std::string& text);

template <class S>
void save_weights(const ModelParams<S>& p, const std::string& path);
template <class S>
ModelParams<S> load_weights(const std::string& path);

}  // namespace crosswise::nn
