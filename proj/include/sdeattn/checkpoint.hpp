#pragma once

// Text checkpoint of named parameter tensors plus a free-form metadata
// block. Values are printed with 17 significant digits so doubles round-trip
// exactly; identical stores always serialize to identical bytes.
//
// Layout:
//   sdeattn-checkpoint v1
//   meta <count>
//   <key>=<value>            (one per line)
//   params <count>
//   <name> <ndim> <extents...>
//   <values...>              (space separated, one line per tensor)

#include <string>
#include <utility>
#include <vector>

#include "sdeattn/nn.hpp"

namespace sdeattn {

using MetaBlock = std::vector<std::pair<std::string, std::string>>;

void save_checkpoint(const std::string& path, const ParameterStore& params, const MetaBlock& meta);

// Copies stored values into the matching entries of `params`; every name
// and shape must match exactly. Returns the metadata block.
MetaBlock load_checkpoint(const std::string& path, ParameterStore& params);

MetaBlock read_checkpoint_meta(const std::string& path);

const std::string* meta_value(const MetaBlock& meta, const std::string& key);

}  // namespace sdeattn
