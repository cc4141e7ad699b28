#pragma once

#include "optdist/alignment.hpp"
#include "optdist/data.hpp"
#include "optdist/diffcore.hpp"
#include "optdist/dlm.hpp"
#include "optdist/dsm.hpp"
#include "optdist/error.hpp"
#include "optdist/gradcheck.hpp"
#include "optdist/io.hpp"
#include "optdist/metrics.hpp"
#include "optdist/model.hpp"
#include "optdist/representation.hpp"
#include "optdist/training.hpp"
