#include "dcl/embedding.hpp"

#include "dcl/analysis.hpp"

#include <algorithm>
#include <random>

namespace dcl::embedding {

Projection project_dynamic(const fusion::Model& model, const synth::DatasetSplit& ds, fusion::Split split) {
    const auto latents = fusion::extract_latents(model, ds, split);
    analysis::TsneOptions opts;
    opts.seed = model.config.seed;
    Projection p;
    p.xy = analysis::tsne(latents.dynamic, opts);
    p.motions = latents.motions;
    p.materials = latents.materials;
    std::vector<int> shuffled = p.motions;
    std::mt19937_64 rng(model.config.seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    p.silhouette_motion = analysis::silhouette(p.xy, p.motions);
    p.silhouette_shuffled = analysis::silhouette(p.xy, shuffled);
    return p;
}

} // namespace dcl::embedding
