#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "brainalign/common.hpp"
#include "brainalign/corpus.hpp"
#include "brainalign/model.hpp"

namespace brainalign {

struct NeuralRecording {
    std::string participant_id;
    Mat responses;                       // [n_TRs x n_voxels]
    std::vector<std::uint8_t> roi_mask;  // 1 = in ROI
    std::optional<Vec> noise_ceiling;

    int n_trs() const { return static_cast<int>(responses.rows()); }
    int n_voxels() const { return static_cast<int>(responses.cols()); }
    void validate() const;
};

struct CohortSpec {
    int n_participants = 8;
    int n_voxels = 500;
    double roi_fraction = 0.2;
    int shared_signal_dim = 16;
    double snr_in_roi = 2.0;   // may be +inf (noise weight 0)
    double snr_out_roi = 0.0;  // 0 = pure noise outside the ROI
    std::vector<double> lag_kernel = {0.25, 0.25, 0.25, 0.25};  // weights for TRs t-1, t-2, ...
    std::uint64_t seed = 0;

    void validate() const;
};

// Square-ish voxel grid used for ROI construction and heatmap export.
int voxel_grid_cols(int n_voxels);
std::pair<int, int> voxel_grid_coords(int voxel, int n_voxels);  // (x, y)

// Compact blob of round(roi_fraction * n_voxels) voxels near the grid
// center; shared by every participant.
std::vector<std::uint8_t> make_roi_mask(int n_voxels, double roi_fraction);

// Synthetic multi-participant recordings: a fixed random projection of
// TR-averaged base-model representations, convolved with the lag kernel
// (zero-padded at run starts), mixed per participant, plus Gaussian noise.
// In-ROI voxels get snr_in_roi, the rest snr_out_roi. Deterministic in
// spec.seed.
std::vector<NeuralRecording> generate_cohort(const StimulusCorpus& corpus,
                                             const DualHeadModel& base_model,
                                             const CohortSpec& spec);

// Recording file: one JSON header line, then the response matrix as
// row-major little-endian float64.
void save_recording(const NeuralRecording& rec, const std::string& path);
NeuralRecording load_recording(const std::string& path);

}  // namespace brainalign
