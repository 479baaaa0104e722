from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

Base = declarative_base()


def make_engine(database_url: str) -> Engine:
    """Engine for a results database; SQLite handles are shared across sweep threads"""
    return create_engine(
        database_url,
        connect_args={"check_same_thread": False} if database_url.startswith("sqlite") else {}
    )


def init_db(bind: Engine):
    """Create the results tables"""
    Base.metadata.create_all(bind=bind)


def session_factory(database_url: str) -> sessionmaker:
    """Session factory bound to a fresh engine with the tables created"""
    bound = make_engine(database_url)
    init_db(bound)
    return sessionmaker(autocommit=False, autoflush=False, bind=bound)
