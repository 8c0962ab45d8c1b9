#pragma once

#include <spadion/units.hpp>
#include <spadion/rng.hpp>
#include <spadion/parallel.hpp>
#include <spadion/optics.hpp>
#include <spadion/model.hpp>
#include <spadion/simulator.hpp>
#include <spadion/detection.hpp>
#include <spadion/estimation.hpp>
#include <spadion/csv.hpp>
#include <spadion/config.hpp>
