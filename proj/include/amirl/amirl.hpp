#pragma once

#include "amirl/error.hpp"
#include "amirl/rng.hpp"
#include "amirl/parallel.hpp"
#include "amirl/csv.hpp"
#include "amirl/panel.hpp"
#include "amirl/tree.hpp"
#include "amirl/lmm.hpp"
#include "amirl/reem.hpp"
#include "amirl/mice.hpp"
#include "amirl/lasso.hpp"
#include "amirl/random_lasso.hpp"
#include "amirl/inference.hpp"
#include "amirl/pipeline.hpp"
#include "amirl/datagen.hpp"
#include "amirl/report.hpp"
