#include "brainalign/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "brainalign/encoding.hpp"
#include "brainalign/rng.hpp"

namespace brainalign {

using nlohmann::json;

void NeuralRecording::validate() const {
    if (responses.rows() < 1 || responses.cols() < 1)
        throw ContractError("recording: empty response matrix");
    if (static_cast<int>(roi_mask.size()) != n_voxels())
        throw ContractError("recording: roi_mask length mismatch");
    if (std::none_of(roi_mask.begin(), roi_mask.end(), [](std::uint8_t b) { return b != 0; }))
        throw ContractError("recording: roi_mask needs at least one true entry");
    if (noise_ceiling && noise_ceiling->size() != n_voxels())
        throw ContractError("recording: noise_ceiling length mismatch");
}

void CohortSpec::validate() const {
    if (n_participants < 1) throw ConfigError("cohort: n_participants must be positive");
    if (n_voxels < 1) throw ConfigError("cohort: n_voxels must be positive");
    if (!(roi_fraction > 0.0 && roi_fraction <= 1.0)) throw ConfigError("cohort: roi_fraction must lie in (0, 1]");
    if (shared_signal_dim < 1) throw ConfigError("cohort: shared_signal_dim must be positive");
    if (!(snr_in_roi > snr_out_roi)) throw ConfigError("cohort: snr_in_roi must exceed snr_out_roi");
    if (!(snr_out_roi >= 0.0)) throw ConfigError("cohort: snr_out_roi must be >= 0");
    if (lag_kernel.empty()) throw ConfigError("cohort: lag_kernel must be nonempty");
    double sum = 0.0;
    for (double w : lag_kernel) {
        if (w < 0.0) throw ConfigError("cohort: lag_kernel weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("cohort: lag_kernel must sum to 1");
}

int voxel_grid_cols(int n_voxels) {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_voxels))));
}

std::pair<int, int> voxel_grid_coords(int voxel, int n_voxels) {
    const int cols = voxel_grid_cols(n_voxels);
    return {voxel % cols, voxel / cols};
}

std::vector<std::uint8_t> make_roi_mask(int n_voxels, double roi_fraction) {
    const int target = std::max(1, static_cast<int>(std::lround(roi_fraction * n_voxels)));
    const int cols = voxel_grid_cols(n_voxels);
    const int rows = (n_voxels + cols - 1) / cols;
    const double cx = (cols - 1) / 2.0, cy = (rows - 1) / 2.0;

    std::vector<int> order(static_cast<std::size_t>(n_voxels));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        auto [ax, ay] = voxel_grid_coords(a, n_voxels);
        auto [bx, by] = voxel_grid_coords(b, n_voxels);
        const double da = std::max(std::abs(ax - cx), std::abs(ay - cy));
        const double db = std::max(std::abs(bx - cx), std::abs(by - cy));
        return da < db;
    });

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_voxels), 0);
    for (int i = 0; i < target; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    return mask;
}

namespace {

void zscore_columns(Mat& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double mu = m.col(c).mean();
        double sd = std::sqrt((m.col(c).array() - mu).square().mean());
        if (sd < 1e-12) sd = 1.0;
        m.col(c) = (m.col(c).array() - mu) / sd;
    }
}

}  // namespace

std::vector<NeuralRecording> generate_cohort(const StimulusCorpus& corpus,
                                             const DualHeadModel& base_model,
                                             const CohortSpec& spec) {
    spec.validate();
    corpus.validate();
    if (corpus.n_trs() < 40) throw ContractError("generate_cohort: corpus needs >= 40 TRs");
    if (spec.shared_signal_dim > base_model.config().d_model)
        throw ConfigError("generate_cohort: shared_signal_dim exceeds d_model");

    const int n_trs = corpus.n_trs();
    const int d = base_model.config().d_model;
    const int k = spec.shared_signal_dim;

    // Shared stimulus signal: fixed random projection of TR-averaged
    // base-model representations.
    Mat feats = compute_tr_features(base_model, corpus);
    Rng proj_rng(derive_seed(spec.seed, "projection"));
    Mat projection(d, k);
    for (Eigen::Index i = 0; i < projection.size(); ++i) projection(i) = proj_rng.gaussian();
    Mat shared = feats * projection;  // [n_trs x k]
    zscore_columns(shared);

    // Hemodynamic-style lag: convolve with the kernel over preceding TRs,
    // zero-padded at each run start.
    Mat lagged = Mat::Zero(n_trs, k);
    for (int t = 0; t < n_trs; ++t) {
        const int run_begin = corpus.run_boundaries[static_cast<std::size_t>(corpus.run_of_tr(t))].first;
        for (std::size_t j = 0; j < spec.lag_kernel.size(); ++j) {
            const int src = t - 1 - static_cast<int>(j);
            if (src >= run_begin && src >= 0) lagged.row(t) += spec.lag_kernel[j] * shared.row(src);
        }
    }
    zscore_columns(lagged);

    const auto roi = make_roi_mask(spec.n_voxels, spec.roi_fraction);

    std::vector<NeuralRecording> cohort;
    cohort.reserve(static_cast<std::size_t>(spec.n_participants));
    for (int p = 0; p < spec.n_participants; ++p) {
        Rng mix_rng(derive_seed(spec.seed, "mixing", static_cast<std::uint64_t>(p)));
        Mat mixing(k, spec.n_voxels);
        for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing(i) = mix_rng.gaussian();
        Mat signal = lagged * mixing;  // [n_trs x n_voxels]
        zscore_columns(signal);

        Rng noise_rng(derive_seed(spec.seed, "noise", static_cast<std::uint64_t>(p)));
        NeuralRecording rec;
        rec.participant_id = "p" + std::to_string(p);
        rec.roi_mask = roi;
        rec.responses = Mat(n_trs, spec.n_voxels);
        for (Eigen::Index t = 0; t < n_trs; ++t) {
            for (Eigen::Index v = 0; v < spec.n_voxels; ++v) {
                const double snr = roi[static_cast<std::size_t>(v)] ? spec.snr_in_roi : spec.snr_out_roi;
                double a, b;
                if (std::isinf(snr)) {
                    a = 1.0;
                    b = 0.0;
                } else {
                    a = snr / std::sqrt(1.0 + snr * snr);
                    b = 1.0 / std::sqrt(1.0 + snr * snr);
                }
                rec.responses(t, v) = a * signal(t, v) + b * noise_rng.gaussian();
            }
        }
        rec.validate();
        cohort.push_back(std::move(rec));
    }
    return cohort;
}

// ------------------------------- recording IO -------------------------------

void save_recording(const NeuralRecording& rec, const std::string& path) {
    rec.validate();
    json header;
    header["format"] = "balnrec";
    header["version"] = 1;
    header["participant_id"] = rec.participant_id;
    header["n_trs"] = rec.n_trs();
    header["n_voxels"] = rec.n_voxels();
    header["roi_mask"] = rec.roi_mask;
    if (rec.noise_ceiling) {
        std::vector<double> nc(rec.noise_ceiling->data(), rec.noise_ceiling->data() + rec.noise_ceiling->size());
        header["noise_ceiling"] = nc;
    } else {
        header["noise_ceiling"] = nullptr;
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("save_recording: cannot open " + tmp);
        f << header.dump() << "\n";
        f.write(reinterpret_cast<const char*>(rec.responses.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(rec.responses.size())));
        if (!f) throw FormatError("save_recording: short write to " + tmp);
    }
    std::rename(tmp.c_str(), path.c_str());
}

NeuralRecording load_recording(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_recording: cannot open " + path);

    std::string line;
    if (!std::getline(f, line) || line.empty())
        throw FormatError("load_recording: " + path + ": missing section 'header'");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw FormatError("load_recording: " + path + ": bad header JSON: " + e.what());
    }
    if (header.value("format", "") != "balnrec")
        throw FormatError("load_recording: " + path + " is not a recording file");
    if (header.value("version", 0) != 1)
        throw FormatError("load_recording: unsupported recording version");

    const int n_trs = header.at("n_trs").get<int>();
    const int n_voxels = header.at("n_voxels").get<int>();
    if (n_trs < 1) throw FormatError("load_recording: " + path + ": header n_trs must be positive");
    if (n_voxels < 1) throw FormatError("load_recording: " + path + ": header n_voxels must be positive");

    NeuralRecording rec;
    rec.participant_id = header.at("participant_id").get<std::string>();
    rec.roi_mask = header.at("roi_mask").get<std::vector<std::uint8_t>>();
    if (!header.at("noise_ceiling").is_null()) {
        auto nc = header.at("noise_ceiling").get<std::vector<double>>();
        rec.noise_ceiling = Eigen::Map<Vec>(nc.data(), static_cast<Eigen::Index>(nc.size()));
    }

    const std::size_t payload_offset = line.size() + 1;
    const std::size_t expected = sizeof(double) * static_cast<std::size_t>(n_trs) * static_cast<std::size_t>(n_voxels);
    rec.responses = Mat(n_trs, n_voxels);
    f.read(reinterpret_cast<char*>(rec.responses.data()), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(f.gcount());
    if (got != expected)
        throw FormatError("load_recording: " + path + ": missing section 'responses': expected " +
                          std::to_string(expected) + " payload bytes at offset " +
                          std::to_string(payload_offset) + ", found " + std::to_string(got));
    try {
        rec.validate();
    } catch (const ContractError& e) {
        throw FormatError("load_recording: " + path + ": " + e.what());
    }
    return rec;
}

}  // namespace brainalign
