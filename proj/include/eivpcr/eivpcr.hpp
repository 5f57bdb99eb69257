#pragma once

#include "eivpcr/error.hpp"
#include "eivpcr/matrix_core.hpp"
#include "eivpcr/rank_select.hpp"
#include "eivpcr/pcr.hpp"
#include "eivpcr/random.hpp"
#include "eivpcr/synthetic_controls.hpp"
#include "eivpcr/sim_lab.hpp"
#include "eivpcr/data_io.hpp"
