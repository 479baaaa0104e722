import json

from sqlalchemy import Column, Float, Integer, String, Text, UniqueConstraint

from app.database import Base


class IndicatorRecordRow(Base):
    """One swept test domain of one scenario run"""
    __tablename__ = "indicator_results"
    __table_args__ = (UniqueConstraint("scenario", "domain_id", name="uq_scenario_domain"),)

    id = Column(Integer, primary_key=True, index=True)
    scenario = Column(String, index=True, nullable=False)
    domain_id = Column(String, index=True, nullable=False)
    kind = Column(String, nullable=False)
    params = Column(Text, nullable=False)
    rt_value = Column(Float)
    rt_slope = Column(Float)
    nrt_value = Column(Float)
    nrt_slope = Column(Float)
    classification_rt = Column(String, index=True)
    classification_nrt = Column(String, index=True)
    duality_gap = Column(Float)
    error = Column(Text)

    def to_dict(self):
        """Convert row to dictionary; infinite indicators are stored as NULL values"""
        return {
            "id": self.id,
            "scenario": self.scenario,
            "domain_id": self.domain_id,
            "kind": self.kind,
            "params": json.loads(self.params),
            "rt_value": self.rt_value,
            "rt_slope": self.rt_slope,
            "nrt_value": self.nrt_value,
            "nrt_slope": self.nrt_slope,
            "classification_rt": self.classification_rt,
            "classification_nrt": self.classification_nrt,
            "duality_gap": self.duality_gap,
            "error": json.loads(self.error) if self.error else None,
        }
