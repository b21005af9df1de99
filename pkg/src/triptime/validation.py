"""Input coercion and validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .core import QueryTable, TripTable, TRIP_COLUMNS


def check_trips(X, validate: bool = True) -> TripTable:
    """Accept a TripTable, an iterable of Trip, or a DataFrame with the
    canonical columns; returns a validated TripTable."""
    if isinstance(X, TripTable):
        table = X
    elif isinstance(X, pd.DataFrame):
        missing = [c for c in TRIP_COLUMNS if c not in X.columns and c != "fare"]
        if missing:
            raise ValueError(f"trip frame is missing columns {missing}")
        table = TripTable(
            id=X["id"].to_numpy(np.int64),
            olat=X["olat"].to_numpy(float), olon=X["olon"].to_numpy(float),
            dlat=X["dlat"].to_numpy(float), dlon=X["dlon"].to_numpy(float),
            start=X["start"].to_numpy(float),
            distance=X["distance"].to_numpy(float),
            duration=X["duration"].to_numpy(float),
            fare=X["fare"].to_numpy(float) if "fare" in X.columns else None,
        )
    else:
        table = TripTable.from_trips(X)
    if len(table) == 0:
        raise ValueError("no trips provided")
    if len(np.unique(table.id)) != len(table):
        raise ValueError("trip ids must be unique")
    if validate:
        table.validate()
    return table


QUERY_COLUMNS = ("olat", "olon", "dlat", "dlon", "start")


def check_queries(X) -> QueryTable:
    """Accept a QueryTable, a TripTable (endpoints plus start time), an
    iterable of Query, or a DataFrame with query columns."""
    if isinstance(X, QueryTable):
        return X
    if isinstance(X, TripTable):
        return QueryTable.from_trip_table(X)
    if isinstance(X, pd.DataFrame):
        missing = [c for c in QUERY_COLUMNS if c not in X.columns]
        if missing:
            raise ValueError(f"query frame is missing columns {missing}")
        ids = (X["id"].to_numpy(np.int64) if "id" in X.columns
               else np.arange(len(X), dtype=np.int64))
        return QueryTable(id=ids,
                          olat=X["olat"].to_numpy(float), olon=X["olon"].to_numpy(float),
                          dlat=X["dlat"].to_numpy(float), dlon=X["dlon"].to_numpy(float),
                          start=X["start"].to_numpy(float))
    return QueryTable.from_queries(X)
