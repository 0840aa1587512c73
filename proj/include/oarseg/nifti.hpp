// Uncompressed NIfTI-1 reader/writer (348-byte header, magic "n+1",
// little-endian payload). Supported on-disk datatypes: uint8, int16,
// float32. Images are written as float32, label maps as uint8.
#pragma once

#include <string>

#include "oarseg/volume.hpp"

namespace oarseg {

// Reads a single .nii file into canonical [D,H,W] order with spacing taken
// from the header pixdim fields; scl_slope/scl_inter are applied when set.
Volume read_volume(const std::string& path);

// Writes volume.data as a float32 .nii file.
void write_volume(const Volume& volume, const std::string& path);

// Writes volume.labels as a uint8 .nii file.
void write_label_volume(const Volume& volume, const std::string& path);

// Reads a .nii file of small nonnegative integers as a label volume; the
// labels land in Volume::labels and data holds the same values.
Volume read_label_volume(const std::string& path, int num_classes);

// Dataset directory layout: <case_dir>/image.nii + <case_dir>/labels.nii.
Volume read_case(const std::string& case_dir, int num_classes = 5);
void write_case(const Volume& volume, const std::string& case_dir);

}  // namespace oarseg
