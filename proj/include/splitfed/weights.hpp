#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "splitfed/tensor.hpp"

namespace splitfed {

/// One named parameter array inside a weight snapshot. Batchnorm running
/// statistics travel as non-trainable entries: they are transmitted and
/// averaged like weights but never touched by the optimizer.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
    bool trainable = true;
};

using ParamSet = std::vector<NamedArray>;

/// The split model weight triple: client front-end W^FE, server body W^S,
/// client back-end W^BE. The client part W^C is {front_end, back_end}.
struct SplitModelWeights {
    ParamSet front_end;
    ParamSet server;
    ParamSet back_end;
};

inline std::size_t param_count(const ParamSet& set, bool trainable_only = false) {
    std::size_t n = 0;
    for (const auto& a : set) {
        if (!trainable_only || a.trainable) n += a.values.size();
    }
    return n;
}

inline void check_same_structure(const ParamSet& a, const ParamSet& b, const char* context) {
    if (a.size() != b.size()) {
        throw shape_error(std::string(context) + ": parameter set sizes differ (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].shape != b[i].shape) {
            throw shape_error(std::string(context) + ": parameter mismatch at '" + a[i].name +
                              "' " + shape_str(a[i].shape) + " vs '" + b[i].name + "' " +
                              shape_str(b[i].shape));
        }
    }
}

inline void check_same_structure(const SplitModelWeights& a, const SplitModelWeights& b,
                                 const char* context) {
    check_same_structure(a.front_end, b.front_end, context);
    check_same_structure(a.server, b.server, context);
    check_same_structure(a.back_end, b.back_end, context);
}

/// Applies fn to the matching ParamSet of every snapshot, for each of the
/// three sections in a fixed order.
template <typename Fn>
void for_each_section(SplitModelWeights& out, const std::vector<const SplitModelWeights*>& in,
                      Fn&& fn) {
    std::vector<const ParamSet*> sets(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) sets[i] = &in[i]->front_end;
    fn(out.front_end, sets);
    for (std::size_t i = 0; i < in.size(); ++i) sets[i] = &in[i]->server;
    fn(out.server, sets);
    for (std::size_t i = 0; i < in.size(); ++i) sets[i] = &in[i]->back_end;
    fn(out.back_end, sets);
}

}  // namespace splitfed
