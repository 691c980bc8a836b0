//! Market data ingestion, train/validation/test splits and synthetic markets.

mod csv_io;
mod panel;
mod split;
mod synth;

pub use csv_io::{
    load_daily_csv, load_intraday_csv, read_daily, read_intraday, write_daily, write_intraday,
    DailySchema, Loaded, SessionConfig,
};
pub use panel::{DailyBar, IntradayBar, IntradayDay, IntradayFragment, MarketPanel};
pub use split::{make_split, weekday_calendar, DateRange, RollingScheme, SplitPlan, SplitRequest};
pub use synth::{
    generate_synthetic_market, simulate_garch, ReturnProcess, StockGroup, SynthSpec,
    SyntheticMarket,
};
