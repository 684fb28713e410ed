#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glab/attention_mask.hpp"
#include "glab/grid.hpp"
#include "glab/matrix.hpp"
#include "glab/rng.hpp"
#include "glab/sym.hpp"

namespace glab {

// Energy-distance statistic 2 E||A-B|| - E||A-A'|| - E||B-B'|| with the
// plug-in pairwise estimator (all pairs, so identical multisets score 0).
double energy_distance(const std::vector<Grid>& a, const std::vector<Grid>& b);

// Squared Frechet distance between Gaussians:
// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
double frechet_gaussian(const std::vector<double>& mu_a, const SymMatrix& cov_a,
                        const std::vector<double>& mu_b, const SymMatrix& cov_b);

struct GaussianFit {
    std::vector<double> mean;
    SymMatrix cov;
};
GaussianFit fit_gaussian(const std::vector<Grid>& samples);

// Top-k PCA basis of a sample set (orthogonal iteration on the covariance);
// project() maps a sample to the k-dim feature space.
struct PcaBasis {
    std::vector<double> mean;
    Matrix components;  // dim x k, orthonormal columns
    std::vector<double> project(const Grid& g) const;
    std::vector<Grid> project_all(const std::vector<Grid>& samples) const;
};
PcaBasis fit_pca(const std::vector<Grid>& samples, std::size_t k);

// Radial frequency profile of attended vs all patches (percentage difference
// per bin); bins_all/bins_masked hold mean DFT magnitudes over 8 radial bins.
struct FrequencyProfile {
    std::size_t patch_size = 8;
    double psi = 1.0;
    std::size_t patches_total = 0;
    std::size_t patches_masked = 0;
    std::vector<double> bins_masked;   // empty marker: patches_masked == 0
    std::vector<double> bins_all;
    std::vector<std::optional<double>> pct_diff;  // nullopt where bins_all ~ 0
};

inline constexpr std::size_t kRadialBins = 8;

// Images paired with their accumulated attention maps (mean over the reverse
// process, mean-1 normalized, at image resolution).
FrequencyProfile frequency_analysis(const std::vector<Grid>& images,
                                    const std::vector<Grid>& attention, std::size_t patch_size,
                                    double psi);

struct IouResult {
    double iou = 0.0;
    double random_iou = 0.0;
    double pct_diff = 0.0;
    bool both_empty = false;
};

// IoU of a thresholded attention mask against a ground-truth foreground,
// with a matched-fraction Bernoulli baseline averaged over 100 draws.
IouResult mask_iou(const Mask& attention_mask, const Mask& truth, RngStream& baseline_rng);

struct ProceduralSample {
    Grid image;          // 1 x H x W in [-1, 1]
    Mask foreground;     // ground-truth textured region
    int label = 0;       // 0: one blob, 1: two blobs
    std::uint64_t seed = 0;
};

struct ProceduralSpec {
    std::size_t height = 16;
    std::size_t width = 16;
    double min_foreground = 0.1;
    double max_foreground = 0.6;
    // Fraction of samples rendered with a mild defocus so the distribution
    // contains naturally blurred instances alongside sharp ones.
    double soft_focus_prob = 0.5;
    double soft_focus_max_sigma = 1.0;
};

// Deterministic synthetic images: smooth background plus 1-2 textured
// elliptical blobs with known masks; a configurable share of samples gets a
// mild whole-image defocus.
std::vector<ProceduralSample> procedural_dataset(std::size_t n, RngStream rng,
                                                 const ProceduralSpec& spec = {});

}  // namespace glab
