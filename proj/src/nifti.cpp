#include "oarseg/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace oarseg {

namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI reader/writer assumes a little-endian host");

// On-disk NIfTI-1 header, 348 bytes, naturally packed.
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtFloat32 = 16;

void write_payload(std::ofstream& out, const Volume& volume, int16_t datatype) {
    const int64_t n = volume.numel();
    if (datatype == kDtFloat32) {
        std::vector<float> buf(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = static_cast<float>(volume.data[static_cast<size_t>(i)]);
        out.write(reinterpret_cast<const char*>(buf.data()), n * 4);
    } else if (datatype == kDtUint8) {
        out.write(reinterpret_cast<const char*>(volume.labels.data()), n);
    }
}

void write_nifti(const Volume& volume, const std::string& path, int16_t datatype) {
    volume.validate();
    Nifti1Header hdr;
    std::memset(&hdr, 0, sizeof(hdr));
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<int16_t>(volume.width());
    hdr.dim[2] = static_cast<int16_t>(volume.height());
    hdr.dim[3] = static_cast<int16_t>(volume.depth());
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    hdr.datatype = datatype;
    hdr.bitpix = datatype == kDtFloat32 ? 32 : 8;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(volume.spacing[0]);
    hdr.pixdim[2] = static_cast<float>(volume.spacing[1]);
    hdr.pixdim[3] = static_cast<float>(volume.spacing[2]);
    for (int i = 4; i < 8; ++i) hdr.pixdim[i] = 1.0f;
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    hdr.xyzt_units = 2;  // millimetres
    std::snprintf(hdr.descrip, sizeof(hdr.descrip), "oarseg");
    std::memcpy(hdr.magic, "n+1", 4);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("nifti: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    const char ext[4] = {0, 0, 0, 0};
    out.write(ext, 4);
    write_payload(out, volume, datatype);
    if (!out) throw std::runtime_error("nifti: write failed for '" + path + "'");
}

}  // namespace

Volume read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("nifti: cannot open '" + path + "'");

    Nifti1Header hdr;
    in.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
    if (in.gcount() != sizeof(hdr))
        throw std::runtime_error("nifti: truncated header in '" + path + "' (need 348 bytes)");
    if (hdr.sizeof_hdr != 348) {
        if (__builtin_bswap32(static_cast<uint32_t>(hdr.sizeof_hdr)) == 348)
            throw std::runtime_error("nifti: big-endian file '" + path + "' is not supported");
        throw std::runtime_error("nifti: '" + path + "' is not a NIfTI-1 file (header size " +
                                 std::to_string(hdr.sizeof_hdr) + ")");
    }
    if (std::memcmp(hdr.magic, "n+1", 4) != 0)
        throw std::runtime_error("nifti: bad magic in '" + path + "' (expected \"n+1\")");

    if (hdr.dim[0] < 1 || hdr.dim[0] > 7)
        throw std::runtime_error("nifti: '" + path + "' has invalid dim[0]=" + std::to_string(hdr.dim[0]));
    int16_t extent[8];
    for (int i = 0; i < 8; ++i) extent[i] = i <= hdr.dim[0] ? hdr.dim[i] : 1;
    for (int i = 1; i <= hdr.dim[0]; ++i)
        if (extent[i] < 1)
            throw std::runtime_error("nifti: '" + path + "' has nonpositive extent dim[" +
                                     std::to_string(i) + "]=" + std::to_string(extent[i]));
    for (int i = 4; i < 8; ++i)
        if (extent[i] > 1)
            throw std::runtime_error("nifti: '" + path + "' has " + std::to_string(hdr.dim[0]) +
                                     " dims; only 3D volumes are supported");
    const int nx = extent[1], ny = std::max<int16_t>(extent[2], 1), nz = std::max<int16_t>(extent[3], 1);

    int elem_size = 0;
    switch (hdr.datatype) {
        case kDtUint8: elem_size = 1; break;
        case kDtInt16: elem_size = 2; break;
        case kDtFloat32: elem_size = 4; break;
        default:
            throw std::runtime_error("nifti: unsupported datatype " + std::to_string(hdr.datatype) +
                                     " in '" + path + "' (supported: uint8, int16, float32)");
    }

    const int64_t offset = static_cast<int64_t>(hdr.vox_offset);
    if (offset < 348)
        throw std::runtime_error("nifti: '" + path + "' has vox_offset " + std::to_string(offset) +
                                 " < 348");
    in.seekg(offset, std::ios::beg);

    const int64_t n = static_cast<int64_t>(nx) * ny * nz;
    std::vector<char> raw(static_cast<size_t>(n * elem_size));
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("nifti: truncated payload in '" + path + "' (expected " +
                                 std::to_string(raw.size()) + " bytes at offset " +
                                 std::to_string(offset) + ")");

    Volume volume;
    volume.dims = {nz, ny, nx};
    volume.data.resize(static_cast<size_t>(n));
    // File order is x-fastest, matching our [D,H,W] row-major layout.
    switch (hdr.datatype) {
        case kDtUint8: {
            const uint8_t* p = reinterpret_cast<const uint8_t*>(raw.data());
            for (int64_t i = 0; i < n; ++i) volume.data[static_cast<size_t>(i)] = p[i];
            break;
        }
        case kDtInt16: {
            int16_t v;
            for (int64_t i = 0; i < n; ++i) {
                std::memcpy(&v, raw.data() + i * 2, 2);
                volume.data[static_cast<size_t>(i)] = v;
            }
            break;
        }
        case kDtFloat32: {
            float v;
            for (int64_t i = 0; i < n; ++i) {
                std::memcpy(&v, raw.data() + i * 4, 4);
                volume.data[static_cast<size_t>(i)] = v;
            }
            break;
        }
    }

    if (hdr.scl_slope != 0.0f && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f)) {
        const double slope = hdr.scl_slope, inter = hdr.scl_inter;
        for (double& v : volume.data) v = slope * v + inter;
    }

    for (int i = 0; i < 3; ++i) {
        const float s = hdr.pixdim[i + 1];
        volume.spacing[static_cast<size_t>(i)] = s > 0.0f ? s : 1.0;
    }
    return volume;
}

void write_volume(const Volume& volume, const std::string& path) {
    write_nifti(volume, path, kDtFloat32);
}

void write_label_volume(const Volume& volume, const std::string& path) {
    if (!volume.has_labels())
        throw std::invalid_argument("nifti: volume has no labels to write");
    write_nifti(volume, path, kDtUint8);
}

Volume read_label_volume(const std::string& path, int num_classes) {
    Volume volume = read_volume(path);
    volume.labels.resize(volume.data.size());
    for (size_t i = 0; i < volume.data.size(); ++i) {
        const double v = volume.data[i];
        if (v != std::floor(v) || v < 0 || v >= num_classes)
            throw std::runtime_error("nifti: '" + path + "' holds value " + std::to_string(v) +
                                     " which is not a label in [0," + std::to_string(num_classes) + ")");
        volume.labels[i] = static_cast<uint8_t>(v);
    }
    return volume;
}

Volume read_case(const std::string& case_dir, int num_classes) {
    namespace fs = std::filesystem;
    Volume volume = read_volume((fs::path(case_dir) / "image.nii").string());
    const fs::path labels_path = fs::path(case_dir) / "labels.nii";
    if (fs::exists(labels_path)) {
        Volume labels = read_label_volume(labels_path.string(), num_classes);
        if (labels.dims != volume.dims)
            throw std::runtime_error("nifti: labels dims do not match image in '" + case_dir + "'");
        volume.labels = std::move(labels.labels);
    }
    return volume;
}

void write_case(const Volume& volume, const std::string& case_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(case_dir, ec);
    write_volume(volume, (fs::path(case_dir) / "image.nii").string());
    if (volume.has_labels()) write_label_volume(volume, (fs::path(case_dir) / "labels.nii").string());
}

}  // namespace oarseg
