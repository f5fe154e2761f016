#include "volseg/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace volseg {

namespace {

constexpr char kMagic[] = "VSEGCASE1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void validate_spacing(const std::array<double, 3>& spacing, const std::string& ctx) {
    for (double s : spacing)
        if (!(s > 0.0))
            throw DataError(ctx + ": spacing components must be positive");
}

}  // namespace

void check_aligned(const Volume& v, const Mask& m) {
    if (v.shape != m.shape)
        throw DataError("case '" + v.case_id + "': mask shape does not match volume shape");
    if (static_cast<int64_t>(v.data.size()) != v.numel() ||
        static_cast<int64_t>(m.labels.size()) != m.numel())
        throw DataError("case '" + v.case_id + "': buffer size does not match shape");
}

void save_case(const std::string& path, const Volume& v, const Mask& m) {
    check_aligned(v, m);
    validate_spacing(v.spacing, "save_case");
    if (m.num_classes < 2) throw DataError("save_case: num_classes must be >= 2");
    for (uint8_t l : m.labels)
        if (l >= m.num_classes)
            throw DataError("save_case: label value outside [0, num_classes)");

    nlohmann::json header = {
        {"case_id", v.case_id},
        {"source_task", v.source_task},
        {"shape", {v.shape[0], v.shape[1], v.shape[2]}},
        {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
        {"num_classes", m.num_classes},
    };
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("save_case: cannot open '" + path + "' for writing");
    f.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    f.write(reinterpret_cast<const char*>(m.labels.data()),
            static_cast<std::streamsize>(m.labels.size()));
    if (!f) throw DataError("save_case: write failed for '" + path + "'");
}

std::pair<Volume, Mask> load_case(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_case: cannot open '" + path + "'");

    char magic[kMagicLen];
    f.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!f || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw DataError("load_case: '" + path + "' is not a native case container");

    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (1u << 20))
        throw DataError("load_case: corrupt header length in '" + path + "'");
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    if (!f) throw DataError("load_case: truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_case: bad header JSON in '" + path + "': " + e.what());
    }

    Volume v;
    Mask m;
    try {
        v.case_id = header.at("case_id").get<std::string>();
        v.source_task = header.value("source_task", std::string{});
        const auto shape = header.at("shape");
        const auto spacing = header.at("spacing");
        for (int i = 0; i < 3; ++i) {
            v.shape[i] = shape.at(i).get<int64_t>();
            v.spacing[i] = spacing.at(i).get<double>();
        }
        m.num_classes = header.at("num_classes").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_case: header field missing in '" + path + "': " + e.what());
    }
    for (int64_t d : v.shape)
        if (d <= 0) throw DataError("load_case: non-positive shape in '" + path + "'");
    validate_spacing(v.spacing, "load_case '" + path + "'");
    m.shape = v.shape;

    const int64_t n = v.numel();
    v.data.resize(static_cast<size_t>(n));
    m.labels.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(v.data.data()),
           static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(float))));
    f.read(reinterpret_cast<char*>(m.labels.data()), static_cast<std::streamsize>(n));
    if (!f) throw DataError("load_case: payload shorter than header shape in '" + path + "'");
    f.peek();
    if (!f.eof()) throw DataError("load_case: trailing bytes after payload in '" + path + "'");

    for (uint8_t l : m.labels)
        if (l >= m.num_classes)
            throw DataError("load_case: label value outside [0, num_classes) in '" + path + "'");
    return {std::move(v), std::move(m)};
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

IntensityStats compute_intensity_stats(
    const std::vector<std::pair<const Volume*, const Mask*>>& cases,
    double q_lo, double q_hi) {
    std::vector<double> fg;
    for (const auto& [v, m] : cases) {
        check_aligned(*v, *m);
        for (int64_t i = 0; i < v->numel(); ++i)
            if (m->labels[i] > 0) fg.push_back(static_cast<double>(v->data[i]));
    }
    if (fg.empty())
        throw DataError("compute_intensity_stats: no foreground voxels in training cases");

    IntensityStats s;
    s.p_lo = percentile(fg, q_lo);
    s.p_hi = percentile(fg, q_hi);
    double sum = 0.0;
    for (double& x : fg) {
        x = std::clamp(x, s.p_lo, s.p_hi);
        sum += x;
    }
    s.mean = sum / static_cast<double>(fg.size());
    double var = 0.0;
    for (double x : fg) {
        const double d = x - s.mean;
        var += d * d;
    }
    s.std = std::sqrt(var / static_cast<double>(fg.size()));
    return s;
}

Volume preprocess(const Volume& v, const IntensityStats& stats) {
    if (!(stats.std > 0.0))
        throw DataError("preprocess: degenerate intensity statistics (std == 0)");
    Volume out = v;
    for (float& x : out.data) {
        const double c = std::clamp(static_cast<double>(x), stats.p_lo, stats.p_hi);
        x = static_cast<float>((c - stats.mean) / stats.std);
    }
    for (float x : out.data)
        if (!std::isfinite(x))
            throw DataError("preprocess: non-finite intensity after standardization");
    return out;
}

namespace {

/// The subset of the 348-byte NIfTI-1 header this adapter needs.
struct NiftiHeader {
    int32_t sizeof_hdr;
    int16_t dim[8];
    int16_t datatype;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    char magic[4];
};

NiftiHeader read_nifti_header(gzFile f, const std::string& path) {
    std::vector<char> raw(348);
    if (gzread(f, raw.data(), 348) != 348)
        throw DataError("nifti: '" + path + "' shorter than a NIfTI-1 header");
    NiftiHeader h{};
    std::memcpy(&h.sizeof_hdr, raw.data() + 0, 4);
    std::memcpy(h.dim, raw.data() + 40, 16);
    std::memcpy(&h.datatype, raw.data() + 70, 2);
    std::memcpy(h.pixdim, raw.data() + 76, 32);
    std::memcpy(&h.vox_offset, raw.data() + 108, 4);
    std::memcpy(&h.scl_slope, raw.data() + 112, 4);
    std::memcpy(&h.scl_inter, raw.data() + 116, 4);
    std::memcpy(h.magic, raw.data() + 344, 4);
    if (h.sizeof_hdr != 348)
        throw DataError("nifti: '" + path +
                        "' has unsupported byte order or is not NIfTI-1");
    if (std::memcmp(h.magic, "n+1", 3) != 0 && std::memcmp(h.magic, "ni1", 3) != 0)
        throw DataError("nifti: '" + path + "' missing NIfTI magic");
    if (h.dim[0] < 3 || h.dim[1] <= 0 || h.dim[2] <= 0 || h.dim[3] <= 0)
        throw DataError("nifti: '" + path + "' is not a 3D image");
    for (int a = 4; a <= h.dim[0]; ++a)
        if (h.dim[a] > 1)
            throw DataError("nifti: '" + path + "' has a non-trivial 4th dimension");
    return h;
}

std::vector<double> read_nifti_payload(gzFile f, const NiftiHeader& h,
                                       const std::string& path) {
    const int64_t n = static_cast<int64_t>(h.dim[1]) * h.dim[2] * h.dim[3];
    int64_t skip = static_cast<int64_t>(h.vox_offset) - 348;
    if (skip < 0)
        throw DataError("nifti: '" + path + "' vox_offset before end of header");
    std::vector<char> chunk(4096);
    while (skip > 0) {
        const int take = static_cast<int>(std::min<int64_t>(skip, 4096));
        if (gzread(f, chunk.data(), take) != take)
            throw DataError("nifti: '" + path + "' truncated before voxel data");
        skip -= take;
    }

    size_t elem = 0;
    switch (h.datatype) {
        case 2: elem = 1; break;    // uint8
        case 4: elem = 2; break;    // int16
        case 8: elem = 4; break;    // int32
        case 16: elem = 4; break;   // float32
        case 64: elem = 8; break;   // float64
        case 512: elem = 2; break;  // uint16
        default:
            throw DataError("nifti: '" + path + "' datatype " +
                            std::to_string(h.datatype) + " not supported");
    }
    std::vector<char> raw(static_cast<size_t>(n) * elem);
    const int64_t want = static_cast<int64_t>(raw.size());
    int64_t got = 0;
    while (got < want) {
        const int take = static_cast<int>(std::min<int64_t>(want - got, 1 << 24));
        const int r = gzread(f, raw.data() + got, take);
        if (r <= 0) throw DataError("nifti: '" + path + "' truncated voxel data");
        got += r;
    }

    std::vector<double> out(static_cast<size_t>(n));
    auto decode = [&](auto tag) {
        using T = decltype(tag);
        const T* p = reinterpret_cast<const T*>(raw.data());
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<double>(p[i]);
    };
    switch (h.datatype) {
        case 2: decode(uint8_t{}); break;
        case 4: decode(int16_t{}); break;
        case 8: decode(int32_t{}); break;
        case 16: decode(float{}); break;
        case 64: decode(double{}); break;
        case 512: decode(uint16_t{}); break;
    }
    if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (double& x : out) x = h.scl_slope * x + h.scl_inter;
    return out;
}

}  // namespace

Volume load_nifti_volume(const std::string& path, const std::string& case_id) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("nifti: cannot open '" + path + "'");
    Volume v;
    try {
        const NiftiHeader h = read_nifti_header(f, path);
        const std::vector<double> vox = read_nifti_payload(f, h, path);
        // NIfTI stores x fastest, so sequential order is already (z,y,x).
        v.shape = {h.dim[3], h.dim[2], h.dim[1]};
        v.spacing = {h.pixdim[3], h.pixdim[2], h.pixdim[1]};
        v.case_id = case_id;
        v.data.resize(vox.size());
        for (size_t i = 0; i < vox.size(); ++i) v.data[i] = static_cast<float>(vox[i]);
    } catch (...) {
        gzclose(f);
        throw;
    }
    gzclose(f);
    validate_spacing(v.spacing, "nifti '" + path + "'");
    return v;
}

std::pair<Volume, Mask> import_nifti_case(const std::string& image_path,
                                          const std::string& mask_path,
                                          const std::string& case_id) {
    Volume v = load_nifti_volume(image_path, case_id);
    Volume lm = load_nifti_volume(mask_path, case_id + "/mask");
    if (v.shape != lm.shape)
        throw DataError("nifti import: mask shape does not match volume shape for '" +
                        case_id + "'");
    Mask m;
    m.shape = v.shape;
    m.labels.resize(v.data.size());
    int max_label = 0;
    for (size_t i = 0; i < lm.data.size(); ++i) {
        const double x = std::llround(static_cast<double>(lm.data[i]));
        if (x < 0.0 || x > 255.0)
            throw DataError("nifti import: label value out of uint8 range in '" +
                            mask_path + "'");
        m.labels[i] = static_cast<uint8_t>(x);
        max_label = std::max(max_label, static_cast<int>(m.labels[i]));
    }
    m.num_classes = std::max(2, max_label + 1);
    return {std::move(v), std::move(m)};
}

}  // namespace volseg
