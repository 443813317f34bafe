#pragma once

#include "dcl/fusion.hpp"

#include <vector>

namespace dcl::embedding {

// t-SNE of the pooled dynamic factors (posterior means) of every clip in a
// split, with silhouettes by motion type and by a shuffled copy of the labels.
struct Projection {
    ag::Mat xy;
    std::vector<int> motions;
    std::vector<int> materials;
    double silhouette_motion = 0.0;
    double silhouette_shuffled = 0.0;
};

Projection project_dynamic(const fusion::Model& model, const synth::DatasetSplit& ds,
                           fusion::Split split = fusion::Split::Test);

} // namespace dcl::embedding
